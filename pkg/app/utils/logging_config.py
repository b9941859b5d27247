import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

class EmojiFormatter(logging.Formatter):
    """Custom formatter that adds emojis to log messages based on level."""

    EMOJI_LEVELS = {
        logging.DEBUG: "🔍",    # Magnifying glass for detailed inspection
        logging.INFO: "ℹ️ ",     # Information
        logging.WARNING: "⚠️ ",  # Warning sign
        logging.ERROR: "❌",    # Cross mark for errors
        logging.CRITICAL: "🚨"  # Emergency light for critical issues
    }

    EMOJI_KEYWORDS = {
        "Starting": "🚀",      # Rocket for start
        "Complete": "✅",      # Check mark for completion
        "Processing": "⚙️ ",   # Gear for processing
        "Sampling": "🎲",     # Die for chain sampling
        "Adapting": "🎚️ ",   # Slider for step-size tuning
        "Writing": "📝",      # Memo for result files
        "Rejected": "🚫",     # Prohibited for rejected moves
        "Loading": "📥",      # Inbox for loading
        "Saving": "📤",       # Outbox for saving
        "Diverged": "💥",     # Collision for divergence
        "Failed": "💥",       # Collision for failure
    }

    def format(self, record):
        # Prefix the rendered line only; the record is shared with the file handlers.
        level_emoji = self.EMOJI_LEVELS.get(record.levelno, "")
        keyword_emoji = ""
        message = str(record.msg)
        for keyword, emoji in self.EMOJI_KEYWORDS.items():
            if keyword.lower() in message.lower():
                keyword_emoji = emoji
                break
        return f"{level_emoji} {keyword_emoji} {super().format(record)}"

class EmojiFilter(logging.Filter):
    def filter(self, record):
        record.emoji = EmojiFormatter.EMOJI_LEVELS.get(record.levelno, "")
        return True

_CONFIGURED = False

def _rotating_handler(path: Path, level: int, formatter: logging.Formatter) -> RotatingFileHandler:
    handler = RotatingFileHandler(
        path,
        maxBytes=5*1024*1024,  # 5MB
        backupCount=5
    )
    handler.setLevel(level)
    handler.setFormatter(formatter)
    handler.addFilter(EmojiFilter())
    return handler

def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None):
    """
    Configure logging for the toolkit. Safe to call more than once.

    The console handler writes to stderr so command output on stdout stays
    clean. Sampler progress goes to the non-propagating "chain" logger.

    Args:
        level: Console log level; defaults to PROXMCMC_LOG_LEVEL or INFO.
        log_dir: Directory for rotating log files; defaults to PROXMCMC_LOG_DIR or logs.

    Returns:
        logging.Logger: The configured logger.
    """
    global _CONFIGURED
    console_level = getattr(logging, (level or os.getenv("PROXMCMC_LOG_LEVEL", "INFO")).upper(), logging.INFO)
    root_logger = logging.getLogger()
    chain_logger = logging.getLogger("chain")
    if _CONFIGURED:
        for handler in root_logger.handlers + chain_logger.handlers:
            if isinstance(handler, logging.StreamHandler) and not isinstance(handler, logging.FileHandler):
                handler.setLevel(console_level)
        return logging.getLogger(__name__)

    logs_dir = Path(log_dir or os.getenv("PROXMCMC_LOG_DIR", "logs"))
    logs_dir.mkdir(parents=True, exist_ok=True)

    root_logger.setLevel(logging.DEBUG)

    console_formatter = EmojiFormatter('%(message)s')
    file_formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(emoji)s %(message)s')
    chain_formatter = logging.Formatter('%(asctime)s - CHAIN - %(levelname)s - %(message)s')

    # Console handler on stderr with emoji formatting
    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level)
    console_handler.setFormatter(console_formatter)

    root_logger.addHandler(console_handler)
    root_logger.addHandler(_rotating_handler(logs_dir / "info.log", logging.INFO, file_formatter))
    root_logger.addHandler(_rotating_handler(logs_dir / "error.log", logging.ERROR, file_formatter))
    root_logger.addHandler(_rotating_handler(logs_dir / "debug.log", logging.DEBUG, file_formatter))

    # Chain logger keeps per-iteration progress out of the root handlers
    chain_logger.setLevel(logging.DEBUG)
    chain_logger.propagate = False
    chain_logger.addHandler(_rotating_handler(logs_dir / "chain.log", logging.DEBUG, chain_formatter))
    chain_logger.addHandler(console_handler)

    _CONFIGURED = True
    return logging.getLogger(__name__)
