"""
Exception hierarchy for the Dirichlet fusion filter.
"""

from typing import Optional


class FusionError(Exception):
    """Base class for every error raised by this package."""


class DomainError(FusionError, ValueError):
    """An argument lies outside the domain of a function."""


class DimensionMismatchError(FusionError, ValueError):
    """Vectors that must share a class count do not."""


class NoConvergenceError(FusionError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, residual: Optional[float] = None, iterations: Optional[int] = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class UnknownClassifierError(FusionError, KeyError):
    """A classifier id is not registered with the schedule policy."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown classifier"


class ConfigError(FusionError, ValueError):
    """Invalid configuration or command-line usage (exit code 2)."""


class StreamFormatError(FusionError, ValueError):
    """Malformed or out-of-order stream data (exit code 1)."""
