"""Exception hierarchy shared across the package.

Every failure mode that callers are expected to handle gets its own type;
generic programming errors stay plain ValueError/TypeError.
"""


class QfgpError(Exception):
    """Base class for all package-specific failures."""


class ValidationError(QfgpError):
    """A parameter or configuration key violates one of its constraints."""

    def __init__(self, key: str, constraint: str):
        self.key = key
        self.constraint = constraint
        super().__init__(f"{key}: {constraint}")


class UnknownPresetError(QfgpError):
    """Requested material preset name is not defined."""


class ConfigError(QfgpError):
    """Configuration document failed to parse or validate.

    ``where`` holds the offending key path, or "line L column C" for
    syntax errors.
    """

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


class QuadratureError(QfgpError):
    """Adaptive frequency integral failed to reach the requested tolerance."""

    def __init__(self, t_tilde: float, message: str, worst_interval=None,
                 worst_error=None):
        self.t_tilde = t_tilde
        self.worst_interval = worst_interval
        self.worst_error = worst_error
        detail = ""
        if worst_interval is not None:
            detail = (f" (worst subinterval [{worst_interval[0]:.6g}, "
                      f"{worst_interval[1]:.6g}], error {worst_error:.3g})")
        super().__init__(f"quadrature at t={t_tilde:.6g}: {message}{detail}")


class GridTooCoarseError(QfgpError):
    """Kernel table time step does not resolve the fastest oscillation."""


class CoverageError(QfgpError):
    """Requested time lies outside the tabulated kernel range."""


class StepSizeError(QfgpError):
    """Adaptive integrator underflowed its step size."""

    def __init__(self, t_tilde: float, coefficients=None):
        self.t_tilde = t_tilde
        self.coefficients = coefficients
        detail = ""
        if coefficients is not None:
            detail = (f" with D={coefficients[0]:.6g}, "
                      f"f={coefficients[1]:.6g}, zeta={coefficients[2]:.6g}")
        super().__init__(f"step size underflow at t={t_tilde:.6g}{detail}")


class PurityExcursionError(QfgpError):
    """Purity exceeded 1 beyond tolerance: coupling too strong for the
    weak-coupling equation of motion."""


class DegenerateSpectrumError(QfgpError):
    """Density-matrix spectrum too close to degeneracy for branch tracking."""

    def __init__(self, t_tilde: float, gap: float):
        self.t_tilde = t_tilde
        self.gap = gap
        super().__init__(
            f"eigenvalue gap {gap:.3g} at t={t_tilde:.6g} below threshold")


class OverlapBreakError(QfgpError):
    """Consecutive eigenvector overlap too small: sampling too sparse to
    track branches."""

    def __init__(self, t_tilde: float, overlap: float):
        self.t_tilde = t_tilde
        self.overlap = overlap
        super().__init__(
            f"branch overlap {overlap:.6g} at t={t_tilde:.6g} below 0.99")


class InsufficientPointsError(QfgpError):
    """Not enough usable points for the requested fit."""


class ZeroCorrectionError(QfgpError):
    """All velocity corrections sit below the numerical floor; no fit."""


class NoBracketError(QfgpError):
    """Calibration target not bracketed by the coupling search interval."""

    def __init__(self, lo, hi, ratio_lo, ratio_hi, target):
        self.bracket = (lo, hi)
        self.ratios = (ratio_lo, ratio_hi)
        self.target = target
        super().__init__(
            f"target ratio {target:.4g} not bracketed: "
            f"ratio({lo:.3g})={ratio_lo:.4g}, ratio({hi:.3g})={ratio_hi:.4g}")


class SweepBudgetError(QfgpError):
    """Sweep grid exceeds the configured point budget."""
