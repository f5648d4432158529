"""Exception hierarchy shared across the package.

All errors derive from :class:`FracconeError` so callers can distinguish
library failures from built-in exceptions.
"""


class FracconeError(Exception):
    """Base class for all package errors."""


class ArgumentError(FracconeError):
    """Raised when an argument is structurally invalid (wrong shape, range)."""


class SingularShift(FracconeError):
    """Raised when A + lambda*I is numerically singular.

    Triggered by a condition estimate above 1e14, i.e. the shift sits on
    (or too close to) the spectrum for a meaningful double-precision solve.
    """


class DefectiveMatrix(FracconeError):
    """Raised when an eigendecomposition cannot reach its residual target."""


class SpectrumNotSectorial(FracconeError):
    """Raised when an eigenvalue of the (shifted) operator has Re <= 0."""


class QuadratureNotConverged(FracconeError):
    """Raised when doubling the node count still moves the result too much."""


class KernelPoleOnPath(FracconeError):
    """Raised when a quadrature node makes a resolvent-kernel denominator vanish."""


class DecayViolated(FracconeError):
    """Raised when sampled values of f contradict the assumed decay envelope."""


class ContourHitsSpectrum(FracconeError):
    """Raised when a contour node is within tolerance of the spectrum."""


class EmptyWindow(FracconeError):
    """Raised when the admissible weight interval is empty."""


class GridTooCoarse(FracconeError):
    """Raised when a radial grid has fewer points than the scheme supports."""


class WindowEmpty(FracconeError):
    """Raised when a fit or comparison window contains no grid points."""


class ShiftTooLarge(FracconeError):
    """Raised when a dilation index shift leaves no interior rows to compare."""


class UnsupportedSmoothness(FracconeError):
    """Raised for smoothness indices the discrete norm does not implement."""


class SolveFailed(FracconeError):
    """Raised when an implicit time step produces a singular linear system."""


class NonPositiveState(FracconeError):
    """Raised when the state violates the positivity floor on entry to a step."""
