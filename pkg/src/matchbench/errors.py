"""Exception hierarchy shared across the harness."""

from __future__ import annotations


class MatchbenchError(Exception):
    """Base class for all harness errors."""


class InvalidInputError(MatchbenchError):
    """Input violates a documented precondition."""


class DegenerateConfigurationError(MatchbenchError):
    """Point configuration cannot support the requested fit."""


class InsufficientDataError(MatchbenchError):
    """Fewer correspondences than the minimal sample requires."""


class EstimationFailedError(MatchbenchError):
    """Robust estimation found no acceptable consensus."""


class AmbiguousDecompositionError(MatchbenchError):
    """Essential-matrix decomposition has no unique cheirality winner.

    Carries the tied (rotation, translation) candidates.
    """

    def __init__(self, message: str, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)


class DegenerateTranslationError(MatchbenchError):
    """Translation direction undefined (near-zero vector)."""


class EmptySequenceError(MatchbenchError):
    """Sequence has no usable images."""


class PairNotFoundError(MatchbenchError):
    """No correspondence file exists for the requested pair."""


class ParseError(MatchbenchError):
    """Malformed input file."""

    def __init__(self, message: str, path=None, line: int | None = None):
        detail = message
        if path is not None:
            detail = f"{path}: {detail}"
        if line is not None:
            detail = f"{detail} (line {line})"
        super().__init__(detail)
        self.path = path
        self.line = line
