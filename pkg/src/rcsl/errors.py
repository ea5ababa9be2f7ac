"""Exception types shared across the package."""
from __future__ import annotations

from typing import Any


class ConvergenceError(RuntimeError):
    """A numerical method did not reach its tolerance within budget.

    Attributes
    ----------
    partial : object
        The best estimate available when the method gave up, usually a
        :class:`rcsl.quadrature.QuadResult`.
    """

    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial


class BudgetExhausted(ConvergenceError):
    """A sampling run used its whole budget without reaching its tolerance."""


class GridResolutionError(ValueError):
    """A grid is too coarse or too small for the requested transform."""
