"""
@fileoverview
This module provides error handling utilities for the command-line harness.
It maps toolkit exceptions to exit codes and makes sure every failure is
logged once before the process exits.
"""

import functools
import json
import logging
import traceback
from typing import Callable

import click
from pydantic import ValidationError

from app.models.schemas import (
    EXIT_MODEL_FAILURE,
    EXIT_SUCCESS,
    EXIT_USAGE_ERROR,
    ProxMCMCError,
)

# Get logger
logger = logging.getLogger(__name__)

__all__ = ["EXIT_SUCCESS", "EXIT_MODEL_FAILURE", "EXIT_USAGE_ERROR", "exit_code_for", "handle_command_errors"]


def exit_code_for(exc: BaseException) -> int:
    """
    Exit code for an exception: 2 for configuration, usage and input-file
    errors, 1 for model and numerical failures.
    """
    if isinstance(exc, ProxMCMCError):
        return exc.exit_code
    if isinstance(exc, (ValidationError, click.UsageError, FileNotFoundError)):
        return EXIT_USAGE_ERROR
    return EXIT_MODEL_FAILURE


def handle_command_errors(func: Callable) -> Callable:
    """
    Decorator for click commands.

    Logs toolkit errors and echoes their to_dict() payload as JSON on stderr,
    logs the traceback of anything unexpected, and exits with the mapped code.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.UsageError:
            raise
        except ProxMCMCError as exc:
            logger.error(f"{exc.__class__.__name__}: {exc.message}")
            if exc.details:
                logger.debug(f"Error details: {exc.to_dict()}")
            click.echo(json.dumps(exc.to_dict(), sort_keys=True), err=True)
            raise SystemExit(exc.exit_code)
        except ValidationError as exc:
            logger.error(f"Validation error: {exc}")
            raise SystemExit(EXIT_USAGE_ERROR)
        except Exception as exc:
            logger.error(f"Unhandled exception: {str(exc)}")
            logger.error(traceback.format_exc())
            raise SystemExit(exit_code_for(exc))
    return wrapper
