"""Exception types raised across the package."""


class DebtCycleError(Exception):
    """Base class for all package errors."""


class InvalidParameters(DebtCycleError, ValueError):
    """A parameter or initial condition lies outside its admissible range."""


class DegenerateSpectrum(DebtCycleError):
    """Eigenvalues collide (or hit 1); closed forms are undefined there."""


class Inconclusive(DebtCycleError):
    """Neither mean process has a root and an asymptote is numerically zero."""


class SameClassAtBracket(DebtCycleError):
    """Both ends of a threshold bracket fall on the same side of the boundary."""


class EmptyContour(DebtCycleError):
    """The requested level is not attained anywhere on the grid."""


class NoHittingData(DebtCycleError):
    """Hitting statistics requested from an ensemble that never stopped paths."""
