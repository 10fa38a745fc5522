"""Logging setup for the CLI and the experiment runner."""
from __future__ import annotations

import logging
import os
from typing import Optional, Union

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DEFAULT_LOG_LEVEL = os.getenv("G2D2_LOG_LEVEL", "WARNING")


def setup_logging(
    level: Union[int, str, None] = None, log_file: Optional[str] = None
) -> logging.Logger:
    """Configure the ``g2d2`` logger with a console handler and an optional file handler.

    Calling it again replaces the handlers, so worker processes and repeated CLI
    invocations in tests do not stack duplicate output.
    """
    if level is None:
        level = DEFAULT_LOG_LEVEL
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ValueError(f"Unknown log level: {level}")

    logger = logging.getLogger("g2d2")
    logger.setLevel(level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(LOG_FORMAT)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.propagate = False
    logger.debug("Logging configured at level %s", logging.getLevelName(level))
    return logger
