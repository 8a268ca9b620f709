"""Exception types shared across the package."""

from __future__ import annotations


class SpalfError(Exception):
    """Base class for every error raised by spalf."""


class ArgumentError(SpalfError, ValueError):
    """Input violates a documented precondition."""


class NumericError(SpalfError, ArithmeticError):
    """An iterative method failed to converge.

    ``best`` carries the best iterate found, when one exists.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class ResourceError(SpalfError, RuntimeError):
    """A budget (iterations, enumeration size, horizon, sample count) was exhausted."""
