"""Shared utility modules for the cycle-consistency graph matching project."""

from .calls import CallTracker
from .errors import CallLimitError, MatchingError
from .logging import get_logger, setup_logging

__all__ = [
    "CallTracker",
    "CallLimitError",
    "MatchingError",
    "get_logger",
    "setup_logging",
]
