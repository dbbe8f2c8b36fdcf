"""Physical parameters, material presets, and the dipole geometry factor.

All computation downstream of this module is dimensionless: frequencies in
units of omega_pl, lengths in units of the gap a, times in units of
1/omega_pl.  SI values exist only here, at the configuration boundary.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import UnknownPresetError, ValidationError

# coupling used when neither coupling_g nor alpha_pol is configured
DEFAULT_COUPLING = 1e-3

# surface-to-sheet gap assumed when a run does not set one
DEFAULT_GAP_A = 3e-9

# fraction of c above which a configuration is rejected as relativistic
MAX_SPEED_FRACTION = 0.01


@dataclass(frozen=True)
class MaterialParams:
    """Drude-Lorentz sheet material.

    The permittivity is eps(w) = omega_pl^2 / (omega0^2 - w^2 - i w Gamma);
    omega0_ratio = 0 is the Drude metal.  Only the dimensionless ratios
    enter the kernels; omega_pl itself matters solely for converting the
    configured velocity to SI and for labelling.
    """

    omega_pl: float       # rad/s
    gamma_ratio: float    # Gamma / omega_pl
    omega0_ratio: float   # omega0 / omega_pl
    label: str = ""

    def __post_init__(self):
        if not self.omega_pl > 0:
            raise ValidationError("material.omega_pl", "must be > 0")
        if not self.gamma_ratio > 0:
            raise ValidationError("material.gamma_ratio", "must be > 0")
        if self.omega0_ratio < 0:
            raise ValidationError("material.omega0_ratio", "must be >= 0")

    @property
    def surface_resonance(self) -> float:
        """Dimensionless frequency of the surface-response peak."""
        return float(np.sqrt(1.0 + self.omega0_ratio ** 2))

    def epsilon(self, omega_tilde):
        """Complex permittivity at dimensionless frequency omega_tilde."""
        w = np.asarray(omega_tilde, dtype=float)
        return 1.0 / (self.omega0_ratio ** 2 - w ** 2
                      - 1j * w * self.gamma_ratio)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MaterialParams":
        return cls(**d)


@dataclass(frozen=True)
class GeometryConfig:
    """Dipole orientation, gap, and reduced tangential velocity.

    alpha is the polar angle of the dipole measured from the sheet normal;
    gamma_dip its azimuth measured from the direction of motion.  u is the
    dimensionless speed v/(a omega_pl).  The non-relativistic bound couples
    u to the material's omega_pl, so it is enforced where geometry and
    material meet (see check_speed).
    """

    alpha: float       # rad
    gamma_dip: float   # rad
    gap_a: float       # m
    u: float           # dimensionless

    def __post_init__(self):
        if not 0.0 <= self.alpha <= np.pi / 2:
            raise ValidationError("geometry.alpha", "must lie in [0, pi/2]")
        if not 0.0 <= self.gamma_dip < 2 * np.pi:
            raise ValidationError("geometry.gamma_dip",
                                  "must lie in [0, 2*pi)")
        if not self.gap_a > 0:
            raise ValidationError("geometry.gap_a", "must be > 0")
        if self.u < 0:
            raise ValidationError("geometry.u", "must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeometryConfig":
        return cls(**d)


@dataclass(frozen=True)
class SystemParams:
    """Two-level system: gap ratio, initial superposition angle, coupling.

    theta0 is the amplitude angle of the initial state
    cos(theta0)|g> + sin(theta0)|e>; the Bloch polar angle is 2*theta0.
    coupling_g absorbs the dipole/gap prefactor d^2/(hbar a^3 omega_pl)
    and is the single calibration knob of the model.  When alpha_pol is
    supplied the coupling is cross-checked against
    d^2 = (3/2) hbar Delta alpha_pol, which reduces to
    g = 1.5 * delta_ratio * alpha_pol / gap_a^3 (alpha_pol in volume units).
    """

    delta_ratio: float            # Delta / omega_pl
    theta0: float                 # rad
    coupling_g: float = DEFAULT_COUPLING
    alpha_pol: float | None = None

    def __post_init__(self):
        if not self.delta_ratio > 0:
            raise ValidationError("system.delta_ratio", "must be > 0")
        if not 0.0 < self.theta0 < np.pi / 2:
            raise ValidationError("system.theta0",
                                  "must lie strictly inside (0, pi/2)")
        if self.coupling_g < 0:
            raise ValidationError("system.coupling_g", "must be >= 0")

    @property
    def period(self) -> float:
        """Unitary cycle length 2 pi / delta_ratio in units of 1/omega_pl."""
        return 2.0 * np.pi / self.delta_ratio

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        return cls(**d)


def check_speed(geometry: GeometryConfig, material: MaterialParams) -> float:
    """Return the SI speed v = u * gap_a * omega_pl, rejecting v > 0.01c."""
    v = geometry.u * geometry.gap_a * material.omega_pl
    if v > MAX_SPEED_FRACTION * SPEED_OF_LIGHT:
        raise ValidationError(
            "geometry.u",
            f"non-relativistic bound: v = u*gap_a*omega_pl = {v:.4g} m/s "
            f"exceeds {MAX_SPEED_FRACTION:g} c")
    return v


def coupling_from_polarizability(delta_ratio: float, alpha_pol: float,
                                 gap_a: float) -> float:
    # d^2 = 1.5 hbar Delta alpha_pol and g = d^2/(hbar a^3 omega_pl);
    # hbar and omega_pl cancel against Delta = delta_ratio * omega_pl
    return 1.5 * delta_ratio * alpha_pol / gap_a ** 3


def check_coupling(system: SystemParams, geometry: GeometryConfig) -> None:
    """When alpha_pol is set, the explicit coupling must agree with the
    polarizability route to 1e-12 relative."""
    if system.alpha_pol is None:
        return
    derived = coupling_from_polarizability(system.delta_ratio,
                                           system.alpha_pol, geometry.gap_a)
    scale = max(abs(system.coupling_g), abs(derived))
    if scale == 0.0:
        return
    if abs(system.coupling_g - derived) > 1e-12 * scale:
        raise ValidationError(
            "system.alpha_pol",
            f"inconsistent with coupling_g: derived {derived:.17g}, "
            f"configured {system.coupling_g:.17g}")


_PRESETS = {
    # gold: Drude metal, weakly damped
    "Au": dict(omega_pl=1.37e16, gamma_ratio=0.05, omega0_ratio=0.0),
    # n-doped silicon: Drude metal, strongly damped
    "nSi": dict(omega_pl=3.5e14, gamma_ratio=1.0, omega0_ratio=0.0),
    # reference metal used by the bundled figure presets; omega_pl is
    # symbolic (=1) because only the ratios enter the dynamics
    "reference-metal": dict(omega_pl=1.0, gamma_ratio=0.1, omega0_ratio=0.0),
}


def preset(name: str) -> MaterialParams:
    """Return a named material parameter set."""
    try:
        fields = _PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(_PRESETS))
        raise UnknownPresetError(
            f"unknown material preset {name!r} (known: {known})") from None
    return MaterialParams(label=name, **fields)


def g_factor(theta, alpha, gamma_dip):
    """Dipole orientation weight of the angular kernel integrand.

    Four-term form; algebraically equal to
    sin^2(alpha) cos^2(theta - gamma_dip) + cos^2(alpha).
    Accepts scalars or arrays, broadcasting as numpy does.
    """
    st, ct = np.sin(theta), np.cos(theta)
    sa, ca = np.sin(alpha), np.cos(alpha)
    sg, cg = np.sin(gamma_dip), np.cos(gamma_dip)
    return (cg ** 2 * sa ** 2 * ct ** 2
            + sg ** 2 * sa ** 2 * st ** 2
            + 2.0 * cg * sg * sa ** 2 * ct * st
            + ca ** 2)


def surface_response(omega_tilde, m: MaterialParams):
    """Im[(eps-1)/(eps+1)] at dimensionless frequency, closed form.

    2 w G / [(1 + w0^2 - w^2)^2 + w^2 G^2]; finite for all w >= 0,
    peaked at the surface resonance sqrt(1 + w0^2).
    """
    w = np.asarray(omega_tilde, dtype=float)
    num = 2.0 * w * m.gamma_ratio
    den = ((1.0 + m.omega0_ratio ** 2 - w ** 2) ** 2
           + w ** 2 * m.gamma_ratio ** 2)
    out = num / den
    return float(out) if np.isscalar(omega_tilde) else out
