"""Failure kinds raised by the estimation services.

Each class also derives from the closest builtin so callers that only know
about ``ValueError`` or ``ArithmeticError`` keep working.
"""


class OrbtrackError(Exception):
    """Base class for all orbtrack errors."""


class ConfigurationError(OrbtrackError, ValueError):
    """Invalid parameters, schema violations or inconsistent settings."""


class InvalidStateError(OrbtrackError, ValueError):
    """A state vector that is non-finite or sits at the Earth's center."""


class DomainError(OrbtrackError, ValueError):
    """An operation outside its mathematical domain (e.g. a non-elliptic orbit)."""


class DegenerateGeometryError(OrbtrackError, ValueError):
    """Object and station coincide, so no line of sight exists."""


class InsufficientDataError(OrbtrackError, ValueError):
    """Too few samples for the requested fit."""


class AlignmentError(OrbtrackError, ValueError):
    """Time series from different runs do not share an epoch grid."""


class EmptyThresholdSetError(OrbtrackError, ValueError):
    """The likelihood threshold exceeds the measurement density peak."""


class NumericalFailureError(OrbtrackError, ArithmeticError):
    """A factorisation or solve failed even after regularisation."""


class TotalDepletionError(NumericalFailureError):
    """Every particle received zero likelihood."""


class DegenerateEnsembleError(NumericalFailureError):
    """All weight sits on a single particle."""


class PropagationError(OrbtrackError, RuntimeError):
    """Integration produced a non-finite state for one member of a batch."""

    def __init__(self, message: str, index: int | None = None) -> None:
        super().__init__(message)
        self.index = index


class EpochError(OrbtrackError, RuntimeError):
    """A tracker step failed; carries the epoch at which it happened."""

    def __init__(self, message: str, t: float) -> None:
        super().__init__(f"epoch t={t:.3f} s: {message}")
        self.t = t


class OutputValidationError(OrbtrackError, RuntimeError):
    """A written artifact does not parse back with its expected columns."""
