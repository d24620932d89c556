"""Exception hierarchy.

Everything numerical derives from :class:`NumericalError` so the CLI can map it
to a single exit code; configuration problems derive from :class:`ConfigError`.
"""

from __future__ import annotations


class ProjFilterError(Exception):
    """Base class for all package errors."""


class ConfigError(ProjFilterError, ValueError):
    pass


class ShapeError(ProjFilterError, ValueError):
    pass


class NumericalError(ProjFilterError, ArithmeticError):
    pass


class EvaluationError(NumericalError):
    """A coefficient returned a non-finite value."""

    def __init__(self, message: str, state=None):
        super().__init__(message if state is None else f"{message} at state {state!r}")
        self.state = state


class DivergenceError(NumericalError):
    """An integration step produced a non-finite state."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        super().__init__(message)
        self.step = step
        self.time = time


class DegenerateChartError(NumericalError):
    pass


class OutsideTubularNeighborhoodError(NumericalError):
    pass


class FormulaConsistencyError(NumericalError):
    pass


class ProbeInvalidError(NumericalError):
    pass


class DegenerateFamilyError(NumericalError):
    pass


class BoundaryError(NumericalError):
    """A parameter left the interior of the family (non-positive scale)."""


class RenormalizationRequiredError(NumericalError):
    pass


class SolverFailureError(NumericalError):
    pass


class DomainTooSmallError(NumericalError):
    pass
