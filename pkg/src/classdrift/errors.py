"""Exception types shared across the package.

Validation failures subclass ValueError so callers that only care about
"bad input" can catch the builtin; everything inherits ClassdriftError so
the CLI can map library failures onto its exit-code contract.
"""


class ClassdriftError(Exception):
    """Base class for all library errors."""


class NegativeEntryError(ClassdriftError, ValueError):
    """A probability vector contains a negative entry."""


class SumNotOneError(ClassdriftError, ValueError):
    """A probability vector does not sum to 1 within tolerance."""


class EmptyClassError(ClassdriftError, ValueError):
    """A class has zero records, so per-class proportions are undefined."""


class SubsetOverflowError(ClassdriftError, ValueError):
    """Subset enumeration requested for more classes than the bitmask cap."""


class MalformedProgramError(ClassdriftError, ValueError):
    """A linear program has inconsistent dimensions or non-finite data."""


class NumericalFailureError(ClassdriftError, RuntimeError):
    """The solver could not complete a pivot sequence reliably."""


class InfeasibleError(ClassdriftError, RuntimeError):
    """Raised by synthesis wrappers when no transition matrix exists."""


class DegenerateRanksError(ClassdriftError, ValueError):
    """Rank correlation undefined because one vector is entirely tied."""


class AllZeroSignalError(ClassdriftError, ValueError):
    """Decibel distortion undefined for an all-zero vector."""


class InvalidConfigError(ClassdriftError, ValueError):
    """A synthesis or plan configuration violates a documented bound."""


class PlanInfeasibleError(ClassdriftError, ValueError):
    """An experiment plan cannot be satisfied by the backend."""


class BackendFailureError(ClassdriftError, RuntimeError):
    """A pipeline backend lost a perturbation it previously reported."""
