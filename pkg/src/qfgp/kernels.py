"""Noise and dissipation kernels of the moving-dipole environment.

The kernels are triple integrals over (omega, k, theta).  The k-integral
has the exact closed form

    int_0^inf k^2 e^{-2k} e^{i b k} dk = 2 / (2 - i b)^3,   b = u cos(theta) t,

which collapses the evaluation to a 2D quadrature.  Better: the remaining
integrand factorizes into a frequency part and an angular part,

    nu(t) + i * <odd part>(t) ~ W(t) * A(t),
    W(t) = int_0^wmax dw [w / Den(w)] e^{-i w t}          (u-independent),
    A(t) = int_0^2pi dtheta G(theta) * 2/(2 - i u cos(theta) t)^3,

so the expensive oscillatory frequency integral W is shared between both
kernels and across every velocity and orientation.  W is evaluated with
adaptive weighted (cos/sin) quadrature and memoized per material; A uses
the spectrally accurate periodic trapezoid rule.

Sign conventions: `dissipative` (default) orients the noise kernel so that
nu(0) > 0 and the zero-velocity dynamics relaxes toward the ground state;
`literal` keeps the opposite overall sign on nu.  The dissipation kernel
eta carries the same sign in both modes.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import (GridTooCoarseError, QuadratureError, ValidationError)
from .params import (GeometryConfig, MaterialParams, check_speed, g_factor)

_QUAD_LIMIT = 512          # subdivision budget of the adaptive omega integral
_SCALE_EPSREL = 1e-10      # tolerance used for the absolute-error scale

RESONANCE_MODES = ("surface", "literal")
SIGN_CONVENTIONS = ("dissipative", "literal")
DIPOLE_WEIGHTS = ("inplane", "full")


@dataclass(frozen=True)
class KernelConfig:
    """Everything the kernel quadrature depends on.

    `resonance_mode` selects the frequency denominator: "surface" uses the
    one consistent with the exact surface response (finite everywhere),
    "literal" the bare Lorentz denominator plus the infrared cutoff
    `ir_cutoff`.  `dipole_weight` selects the angular weight: "inplane"
    keeps only the sheet-parallel dipole channel sin^2(alpha)
    cos^2(theta - gamma); "full" adds the isotropic cos^2(alpha) channel
    of the four-term weight.
    """

    material: MaterialParams
    geometry: GeometryConfig
    coupling_g: float = 1e-3
    resonance_mode: str = "surface"
    sign_convention: str = "dissipative"
    dipole_weight: str = "inplane"
    ir_cutoff: float = 1e-4
    omega_max: float | None = None
    n_theta: int = 64
    omega_tol: float = 1e-8

    def __post_init__(self):
        if self.resonance_mode not in RESONANCE_MODES:
            raise ValidationError("kernel.resonance_mode",
                                  f"must be one of {RESONANCE_MODES}")
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise ValidationError("kernel.sign_convention",
                                  f"must be one of {SIGN_CONVENTIONS}")
        if self.dipole_weight not in DIPOLE_WEIGHTS:
            raise ValidationError("kernel.dipole_weight",
                                  f"must be one of {DIPOLE_WEIGHTS}")
        if self.coupling_g < 0:
            raise ValidationError("kernel.coupling_g", "must be >= 0")
        if not 0.0 < self.ir_cutoff < 1.0:
            raise ValidationError("kernel.ir_cutoff",
                                  "must lie strictly inside (0, 1)")
        if self.n_theta < 32 or self.n_theta % 2:
            raise ValidationError("kernel.n_theta", "must be even and >= 32")
        if not 0.0 < self.omega_tol <= 1e-3:
            raise ValidationError("kernel.omega_tol",
                                  "must lie in (0, 1e-3]")
        if self.omega_max is not None:
            if self.omega_max <= self._mode_resonance() + \
                    10.0 * self.material.gamma_ratio:
                raise ValidationError(
                    "kernel.omega_max",
                    "must exceed the resonance frequency + 10*gamma_ratio")
        check_speed(self.geometry, self.material)

    def _mode_resonance(self) -> float:
        if self.resonance_mode == "surface":
            return self.material.surface_resonance
        return self.material.omega0_ratio

    @property
    def omega_max_resolved(self) -> float:
        if self.omega_max is not None:
            return self.omega_max
        # integrand decays as w^-3 past the resonance; 10x covers the tail
        return 10.0 * (self.material.surface_resonance
                       + self.material.gamma_ratio)

    @property
    def omega_lower(self) -> float:
        # the surface denominator is finite at w = 0; the literal one is
        # not integrable there for a Drude metal, hence the cutoff
        return 0.0 if self.resonance_mode == "surface" else self.ir_cutoff

    @property
    def tail_estimate(self) -> float:
        """Bound on the truncation error of either kernel."""
        pref = self.coupling_g * self.material.gamma_ratio / np.pi ** 2
        return pref * np.pi / (4.0 * self.omega_max_resolved ** 2)

    def canonical_dict(self) -> dict:
        return {
            "material": self.material.to_dict(),
            "geometry": self.geometry.to_dict(),
            "coupling_g": self.coupling_g,
            "resonance_mode": self.resonance_mode,
            "sign_convention": self.sign_convention,
            "dipole_weight": self.dipole_weight,
            "ir_cutoff": self.ir_cutoff,
            "omega_max": self.omega_max_resolved,
            "n_theta": self.n_theta,
            "omega_tol": self.omega_tol,
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Kernels sampled on the uniform grid t = 0, dt, 2dt, ...

    Represents t >= 0 only; consumers extend by parity, nu(-t) = nu(t) and
    eta(-t) = -eta(t).
    """

    dt: float
    t: np.ndarray
    nu: np.ndarray
    eta: np.ndarray
    config_hash: str
    tail_estimate: float = 0.0

    def __post_init__(self):
        if len(self.t) < 2:
            raise ValidationError("table", "needs at least two grid points")
        expected = np.arange(len(self.t)) * self.dt
        if not np.array_equal(self.t, expected):
            raise ValidationError("table", "time grid must be i*dt from 0")
        if self.eta[0] != 0.0:
            raise ValidationError("table", "eta(0) must be exactly 0")
        for arr in (self.t, self.nu, self.eta):
            arr.setflags(write=False)

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    @property
    def values(self) -> np.ndarray:
        """(n, 3) array of (t, nu, eta) rows."""
        return np.column_stack([self.t, self.nu, self.eta])

    def head(self, n: int) -> "KernelTable":
        return KernelTable(self.dt, self.t[:n].copy(), self.nu[:n].copy(),
                           self.eta[:n].copy(), self.config_hash,
                           self.tail_estimate)


def scale_table(table: KernelTable, factor: float,
                config_hash: str) -> KernelTable:
    # kernels are exactly linear in the coupling, so rescaling a table is
    # equivalent to retabulating at factor * coupling_g
    return KernelTable(table.dt, table.t.copy(), table.nu * factor,
                       table.eta * factor, config_hash,
                       abs(factor) * table.tail_estimate)


def inner_k_integral(b):
    """Closed form of int_0^inf k^2 e^{-2k} e^{i b k} dk = 2/(2 - i b)^3."""
    b = np.asarray(b, dtype=float)
    out = 2.0 / (2.0 - 1j * b) ** 3
    return complex(out) if out.ndim == 0 else out


def _denominator(w, gamma_ratio, omega0_ratio, mode):
    if mode == "surface":
        return (1.0 + omega0_ratio ** 2 - w ** 2) ** 2 \
            + w ** 2 * gamma_ratio ** 2
    return (omega0_ratio ** 2 - w ** 2) ** 2 + w ** 2 * gamma_ratio ** 2


def _checked_quad(func, a, b, t_label, **kw):
    ret = integrate.quad(func, a, b, full_output=1, limit=_QUAD_LIMIT, **kw)
    if len(ret) == 4:
        _, _, info, message = ret
        worst = worst_err = None
        try:
            last = info["last"]
            errs = np.asarray(info["elist"][:last])
            i = int(np.argmax(errs))
            worst = (float(info["alist"][i]), float(info["blist"][i]))
            worst_err = float(errs[i])
        except (KeyError, IndexError, TypeError):
            pass
        raise QuadratureError(t_label, str(message).replace("\n", " "),
                              worst, worst_err)
    return ret[0]


# --- frequency integral W ---------------------------------------------------

def _w_key(cfg: KernelConfig) -> tuple:
    # W depends only on the dimensionless material ratios and the
    # frequency-integration controls; omega_pl, geometry, and coupling do
    # not enter
    m = cfg.material
    return (m.gamma_ratio, m.omega0_ratio, cfg.resonance_mode,
            cfg.omega_lower, cfg.omega_max_resolved, cfg.omega_tol)


_SCALE_CACHE: dict[tuple, float] = {}
_W_GRID_CACHE: dict[tuple, np.ndarray] = {}


def _w_scale(key: tuple) -> float:
    """Magnitude scale of W, |W(0)|, used to anchor absolute tolerances."""
    try:
        return _SCALE_CACHE[key]
    except KeyError:
        pass
    gamma, w0, mode, lo, hi, _ = key

    def f(w):
        return w / _denominator(w, gamma, w0, mode)

    res = math.sqrt(1.0 + w0 * w0)
    pts = [p for p in (res,) if lo < p < hi]
    scale = _checked_quad(f, lo, hi, 0.0, epsabs=0.0,
                          epsrel=_SCALE_EPSREL, points=pts)
    _SCALE_CACHE[key] = scale
    return scale


def _w_scalar(t: float, key: tuple, scale: float) -> complex:
    """W(t) by adaptive weighted quadrature; t may be any real number."""
    gamma, w0, mode, lo, hi, tol = key

    def f(w):
        return w / _denominator(w, gamma, w0, mode)

    epsabs = tol * scale
    if t == 0.0:
        res = math.sqrt(1.0 + w0 * w0)
        pts = [p for p in (res,) if lo < p < hi]
        wc = _checked_quad(f, lo, hi, t, epsabs=epsabs, epsrel=tol,
                           points=pts)
        return complex(wc, 0.0)
    wc = _checked_quad(f, lo, hi, t, weight="cos", wvar=t,
                       epsabs=epsabs, epsrel=tol)
    ws = _checked_quad(f, lo, hi, t, weight="sin", wvar=t,
                       epsabs=epsabs, epsrel=tol)
    return complex(wc, -ws)


def _w_chunk(args) -> list[complex]:
    # top-level so worker processes can unpickle it
    ts, key, scale = args
    return [_w_scalar(t, key, scale) for t in ts]


def _w_on_grid(cfg: KernelConfig, dt: float, n: int,
               workers: int | None = None) -> np.ndarray:
    """First n values of W on the grid i*dt, memoized per material."""
    key = _w_key(cfg)
    grid_key = key + (dt,)
    scale = _w_scale(key)
    have = _W_GRID_CACHE.get(grid_key)
    m = 0 if have is None else len(have)
    if m >= n:
        return have[:n].copy()
    ts = np.arange(m, n) * dt
    if workers and workers > 1 and len(ts) >= 4 * workers:
        chunks = np.array_split(ts, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_w_chunk,
                                  [(c.tolist(), key, scale) for c in chunks]))
        new = np.array([w for part in parts for w in part], dtype=complex)
    else:
        new = np.array([_w_scalar(float(t), key, scale) for t in ts],
                       dtype=complex)
    full = new if have is None else np.concatenate([have, new])
    _W_GRID_CACHE[grid_key] = full
    return full[:n].copy()


def clear_memo():
    """Drop the in-process W memo (mainly for tests)."""
    _SCALE_CACHE.clear()
    _W_GRID_CACHE.clear()


# --- angular integral A -----------------------------------------------------

def _theta_weight(theta, cfg: KernelConfig):
    g = cfg.geometry
    if cfg.dipole_weight == "inplane":
        return np.sin(g.alpha) ** 2 * np.cos(theta - g.gamma_dip) ** 2
    return g_factor(theta, g.alpha, g.gamma_dip)


def _theta_factor(ts: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """A(t) = int_0^2pi G(theta) * inner_k(u cos(theta) t) dtheta.

    Periodic trapezoid rule: for a smooth 2pi-periodic integrand the
    uniform sum converges spectrally in n_theta.
    """
    n = cfg.n_theta
    theta = 2.0 * np.pi * np.arange(n) / n
    gw = _theta_weight(theta, cfg)
    b = cfg.geometry.u * np.cos(theta)[None, :] * np.asarray(ts)[:, None]
    ik = inner_k_integral(b)
    # row-wise pairwise sum: reduction order independent of the number of
    # time points, so tables and single-point calls agree bitwise
    return (2.0 * np.pi / n) * np.add.reduce(ik * gw, axis=1)


def _assemble(cfg: KernelConfig, w: np.ndarray, a: np.ndarray):
    wa = w * a
    pref = cfg.coupling_g * cfg.material.gamma_ratio / np.pi ** 2
    s_nu = 1.0 if cfg.sign_convention == "dissipative" else -1.0
    nu = s_nu * pref * wa.real
    eta = -pref * wa.imag
    return nu, eta


def kernel_pair(t_tilde: float, cfg: KernelConfig) -> tuple[float, float]:
    """Evaluate (nu, eta) at a single dimensionless time t_tilde >= 0."""
    if t_tilde < 0:
        raise ValidationError("t_tilde", "kernel_pair requires t >= 0")
    if cfg.coupling_g == 0.0:
        return 0.0, 0.0
    key = _w_key(cfg)
    w = _w_scalar(float(t_tilde), key, _w_scale(key))
    a = _theta_factor(np.array([t_tilde], dtype=float), cfg)[0]
    nu, eta = _assemble(cfg, np.array([w]), np.array([a]))
    if t_tilde == 0.0:
        return float(nu[0]), 0.0
    return float(nu[0]), float(eta[0])


def max_dt(cfg: KernelConfig, delta_ratio: float | None = None) -> float:
    """Coarsest grid step that still resolves every oscillation present."""
    fastest = max(cfg.material.surface_resonance, delta_ratio or 0.0)
    return 2.0 * np.pi / (20.0 * fastest)


def tabulate(cfg: KernelConfig, t_max: float, dt: float,
             delta_ratio: float | None = None,
             workers: int | None = None,
             cache_dir=None) -> KernelTable:
    """Tabulate the kernels on t = 0, dt, ..., covering at least t_max.

    delta_ratio, when known, tightens the grid-resolution check to the
    system frequency as well as the material resonance.  Tabulation is
    pointwise in t, so tables at different dt agree exactly on shared
    grid points, and results never depend on worker count.
    """
    if dt <= 0:
        raise ValidationError("dt", "must be > 0")
    if t_max <= 0:
        raise ValidationError("t_max", "must be > 0")
    if dt > max_dt(cfg, delta_ratio):
        raise GridTooCoarseError(
            f"dt={dt:g} does not resolve the fastest frequency; "
            f"need dt <= {max_dt(cfg, delta_ratio):.6g}")
    n = int(math.ceil(t_max / dt - 1e-9)) + 1
    while (n - 1) * dt < t_max - 1e-9 * max(1.0, t_max):
        n += 1

    if cache_dir is not None:
        from .cache import load_table
        cached = load_table(cache_dir, cfg, dt)
        if cached is not None and len(cached.t) >= n:
            return cached.head(n)

    grid = np.arange(n) * dt
    if cfg.coupling_g == 0.0:
        zeros = np.zeros(n)
        table = KernelTable(dt, grid, zeros, zeros.copy(), cfg.digest(), 0.0)
    else:
        w = _w_on_grid(cfg, dt, n, workers=workers)
        a = _theta_factor(grid, cfg)
        nu, eta = _assemble(cfg, w, a)
        eta[0] = 0.0  # sin weight vanishes identically at t = 0
        table = KernelTable(dt, grid, nu, eta, cfg.digest(),
                            cfg.tail_estimate)

    if cache_dir is not None:
        from .cache import store_table
        store_table(cache_dir, cfg, table)
    return table
