"""Shared rich console and logging setup."""

from __future__ import annotations

import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console(stderr=True)

_PACKAGE_LOGGER = "trustpoison"


def setup_logging(level: int | str = logging.INFO) -> logging.Logger:
    """Route the package logger through a RichHandler (installed once)."""
    logger = logging.getLogger(_PACKAGE_LOGGER)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    logger.setLevel(level)
    return logger
