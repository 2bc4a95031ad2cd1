"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for configuration and
usage problems, 3 for numerical failures, 4 for I/O.
"""
from __future__ import annotations


class StochoscError(Exception):
    exit_code = 1


class ConfigError(StochoscError):
    """Invalid configuration. ``problems`` lists every violation found."""

    exit_code = 2

    def __init__(self, message: str, problems: list[str] | None = None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n  " + "\n  ".join(self.problems)
        super().__init__(message)


class DomainError(ConfigError):
    """A physical constraint (e.g. |omega| <= Omega^2) is violated."""


class UsageError(ConfigError):
    """Mismatched inputs passed between operations."""


class NumericalError(StochoscError):
    exit_code = 3


class StabilityError(NumericalError):
    pass


class PositivityError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message: str, history: list[float] | None = None):
        self.history = list(history or [])
        super().__init__(message)


class AccuracyError(NumericalError):
    pass


class FitResidualError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class CoverageError(NumericalError):
    pass


class VarianceError(NumericalError):
    pass


class ResolutionError(NumericalError):
    pass


class ArtifactIOError(StochoscError):
    exit_code = 4
