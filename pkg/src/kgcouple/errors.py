"""Exception types raised by kgcouple.

Validation-style failures subclass ValueError so callers that catch ValueError (as the CLI does)
keep working; dynamical blow-up is a RuntimeError.
"""

from typing import Any, List, Optional, Sequence


class KgcoupleError(Exception):
    """Base class for all kgcouple errors."""


class ConfigParseError(KgcoupleError, ValueError):
    """A configuration file is not valid YAML."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        super().__init__(message)


class ConfigValidationError(KgcoupleError, ValueError):
    """A configuration parsed but failed validation. Carries every error found, not just the first."""

    def __init__(self, errors: Sequence[str]):
        self.errors: List[str] = list(errors)
        super().__init__("Invalid configuration:\n  " + "\n  ".join(self.errors))


class SupportTooLargeError(KgcoupleError, ValueError):
    """A compactly supported profile does not fit the periodic box guard."""


class SizeMismatchError(KgcoupleError, ValueError):
    """An array does not match the grid it is used with."""


class RadiusOutOfRangeError(KgcoupleError, ValueError):
    """A ball radius lies outside (0, L/2]."""


class SingularDenominatorError(KgcoupleError, ValueError):
    """A lattice denominator k²+m²+λ² (or k²+m²−s²) is too close to zero."""

    def __init__(self, message: str, mode: Any = None):
        self.mode = mode
        super().__init__(message)


class SingularMatrixError(KgcoupleError, ValueError):
    """D(λ) is numerically singular."""

    def __init__(self, message: str, lam: complex = 0j, cond: float = float("inf")):
        self.lam = lam
        self.cond = cond
        super().__init__(message)


class TailToleranceError(KgcoupleError, ValueError):
    """The Bromwich contour truncation leaves a tail above tolerance."""


class BranchPointError(KgcoupleError, ValueError):
    """A boundary value was requested inside the guard band around a branch point ±i·m_n."""


class DecayWindowError(KgcoupleError, ValueError):
    """A decay fit window is empty, too short, or contains nonpositive values."""


class NotPSDError(KgcoupleError, ValueError):
    """An assembled spectral density has a negative eigenvalue."""

    def __init__(self, message: str, k_index: Any = None, eigenvalue: float = 0.0):
        self.k_index = k_index
        self.eigenvalue = eigenvalue
        super().__init__(message)


class HorizonError(KgcoupleError, ValueError):
    """A time horizon exceeds the box wraparound window or the available kernel samples."""


class MissingTrajectoryError(KgcoupleError, ValueError):
    """A reconstruction needs recorded particle positions that were not supplied."""


class InstabilityError(KgcoupleError, RuntimeError):
    """The energy of an evolution grew past the guard factor."""

    def __init__(self, message: str, time: float = 0.0, ratio: float = 0.0):
        self.time = time
        self.ratio = ratio
        super().__init__(message)


class ConditionFailure(KgcoupleError):
    """One of the model conditions A1, A1' or A3 does not hold."""

    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message)
