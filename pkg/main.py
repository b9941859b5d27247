"""
@fileoverview
This is the main entry point for the proximal MCMC toolkit. It loads
environment variables, configures logging and hands control to the click
command group.
"""

from dotenv import load_dotenv

from app.api.commands import cli
from app.utils.logging_config import setup_logging

# Load environment variables from .env file
load_dotenv()

if __name__ == "__main__":
    # Configure logging
    logger = setup_logging()
    logger.debug("Logging system initialized")
    cli()
