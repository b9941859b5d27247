"""
@fileoverview
This middleware logs command invocations of the command-line harness.
It captures the command name, run id, experiment seed, output directory,
exit status and processing time.
"""

import functools
import logging
import time
import uuid
from typing import Callable, Optional


class CommandLoggingMiddleware:
    """
    Wraps a command callback with start, completion and failure logging.

    Logs the following information for each invocation:
    - Run ID (UUID)
    - Command name
    - Seed and output directory, when the command reports them
    - Exit status
    - Processing time
    """

    def __init__(self, command_name: str):
        self.command_name = command_name
        self.logger = logging.getLogger("cli.command")
        self.run_id: Optional[str] = None

    def __call__(self, func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            return self.dispatch(func, *args, **kwargs)
        return wrapper

    def dispatch(self, func: Callable, *args, **kwargs):
        # Generate unique run ID
        self.run_id = str(uuid.uuid4())
        seed = kwargs.get("seed")
        out = kwargs.get("out")

        self.logger.info(
            f"Starting {self.command_name} (run {self.run_id})"
            + (f" seed={seed}" if seed is not None else "")
            + (f" out={out}" if out is not None else "")
        )
        start_time = time.perf_counter()

        try:
            result = func(*args, **kwargs)
        except SystemExit as e:
            process_time = time.perf_counter() - start_time
            code = e.code if isinstance(e.code, int) else 1
            if code == 0:
                self.logger.info(f"Complete {self.command_name} (run {self.run_id}) in {process_time:.2f}s")
            else:
                self.logger.error(
                    f"Failed {self.command_name} (run {self.run_id}) with exit code {code} "
                    f"in {process_time:.2f}s"
                )
            raise
        except Exception as e:
            process_time = time.perf_counter() - start_time
            self.logger.error(
                f"Failed {self.command_name} (run {self.run_id}) - Error: {str(e)} in {process_time:.2f}s"
            )
            raise

        process_time = time.perf_counter() - start_time
        self.logger.info(f"Complete {self.command_name} (run {self.run_id}) in {process_time:.2f}s")
        return result


def log_command(command_name: str) -> Callable:
    """Decorator form of CommandLoggingMiddleware."""
    return CommandLoggingMiddleware(command_name)
