from __future__ import annotations

import logging
import os
from typing import Optional

_DEFAULT_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
_DEFAULT_DATEFMT = "%Y-%m-%dT%H:%M:%SZ"


def setup_logging(
    level: Optional[str] = None,
    log_file: Optional[str] = None,
    fmt: str = _DEFAULT_FORMAT,
    datefmt: str = _DEFAULT_DATEFMT,
) -> None:
    """Configure root logger.

    Respect `LOG_LEVEL` env var when level is not supplied. When `log_file`
    is given, records are mirrored to that file (training runs).
    """

    log_level = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format=fmt,
        datefmt=datefmt,
        handlers=handlers,
        force=True,
    )


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Return module-specific logger."""

    if logging.getLogger().handlers:
        return logging.getLogger(name)

    # Auto-setup if not configured.
    setup_logging()
    return logging.getLogger(name)
