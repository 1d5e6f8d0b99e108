"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class MomnetError(Exception):
    exit_code = 1


class ConfigurationError(MomnetError, ValueError):
    """Invalid dimensions, parameters or cross-section inconsistencies."""

    exit_code = 2


class NumericError(MomnetError, ArithmeticError):
    """Non-finite values or a numerical procedure that broke down."""

    exit_code = 3


class SolverError(NumericError):
    """LP solver failed; ``best`` holds the best iterate seen, if any."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class InfeasibleConstraintError(SolverError):
    pass


class RankDeficientError(NumericError):
    pass


class DegenerateMomentError(NumericError):
    pass


class InsufficientCandidatesError(NumericError):
    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial if partial is not None else []


class OracleScaleError(ConfigurationError):
    """Input too large for an exhaustive oracle or diagnostic."""


class ArtifactIOError(MomnetError, OSError):
    exit_code = 4
