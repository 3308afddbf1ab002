"""Exception hierarchy shared by every gm_* module."""

from __future__ import annotations


class MatchingError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMatchingError(MatchingError, ValueError):
    """A matching violates the uniqueness (or completeness) constraints."""


class InstanceError(MatchingError, ValueError):
    """A QAP instance is malformed (bad keys, non-finite costs)."""


class ShapeMismatchError(MatchingError, ValueError):
    """Shapes of instances, gradients or parameters disagree."""


class InfeasibleInstanceError(MatchingError):
    """A complete instance has no feasible matching (n1 != n2)."""


class SolverRefusalError(MatchingError):
    """The exact solver refuses an instance above its node limit."""


class ChainMismatchError(MatchingError, ValueError):
    """Matchings do not chain over a consistent sequence of sets."""


class DatasetFormatError(MatchingError):
    """A dataset or checkpoint file cannot be parsed."""


class GenerationError(MatchingError):
    """Synthetic data could not be produced within the retry budget."""


class ConfigError(MatchingError, ValueError):
    """Unknown configuration key or invalid value."""


class NoAdmissibleTripleError(ConfigError):
    """No triple of sets shares enough common keypoints."""


class CallLimitError(MatchingError, RuntimeError):
    """Raised when a solver-call budget would be exceeded."""


class TripleSolveError(MatchingError):
    """A solve inside a training triple failed; carries the triple's set ids."""

    def __init__(self, set_ids: tuple, stage: str, cause: Exception):
        self.set_ids = set_ids
        self.stage = stage
        super().__init__(f"{stage} solve failed for triple {set_ids}: {cause}")
