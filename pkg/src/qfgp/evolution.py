"""Reduced dynamics of the two-level system coupled to the moving-surface
environment.

Basis and frame conventions, fixed once here and used everywhere:

* Basis ordering is (|g>, |e>).  The atomic Hamiltonian is
  H = (delta/2) SZ with SZ = diag(-1, +1), so |g> has energy -delta/2.
* (SX, SY, SZ) below form a right-handed Pauli triple,
  [SX, SY] = 2i SZ and cyclic, so every standard identity applies.
* The system couples to the environment through SX.  The equation of
  motion is

      drho/dt = -i (delta/2) [SZ, rho] - D [SX, [SX, rho]]
                - f [SX, [SY, rho]] + i zeta [SX, {SY, rho}]

  with time-local coefficients built from the kernels:

      D(t)    = int_0^t nu(s)  cos(delta s) ds
      f(t)    = int_0^t nu(s)  sin(delta s) ds
      zeta(t) = int_0^t eta(s) sin(delta s) ds

* In this frame the Bloch components obey x' = -delta y,
  y' = delta x - 4 D y + 4 f x, z' = -4 D z - 4 zeta, with stationary
  z* = -zeta/D: the ground state, as a dissipative environment demands.
* Reported Bloch coordinates place |g> at the north pole:
  (x, y, z)_report = (x, -y, -z) in the frame above (a proper rotation,
  so handedness is preserved).  The initial state
  cos(theta0)|g> + sin(theta0)|e> then sits at polar angle 2*theta0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp

from .errors import (CoverageError, PurityExcursionError, StepSizeError,
                     ValidationError)
from .kernels import KernelTable
from .params import GeometryConfig, SystemParams

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SY = np.array([[0.0, 1.0j], [-1.0j, 0.0]], dtype=complex)
SZ = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)

PURITY_EXCURSION_TOL = 1e-6

# digest recorded when a run uses no table at all (zero coupling)
ZERO_TABLE_DIGEST = "uncoupled"


@dataclass(frozen=True)
class Coefficients:
    t_tilde: float
    D: float
    f: float
    zeta: float


class CoefficientTable:
    """Cumulative-integral coefficients on the kernel grid.

    Cumulative trapezoid once, then linear interpolation between grid
    points for the arbitrary times an adaptive integrator asks for.
    """

    def __init__(self, table: KernelTable, delta_ratio: float):
        if delta_ratio <= 0:
            raise ValidationError("delta_ratio", "must be > 0")
        t = table.t
        cos_d = np.cos(delta_ratio * t)
        sin_d = np.sin(delta_ratio * t)
        self.t = t
        self.t_max = table.t_max
        self.delta_ratio = delta_ratio
        self.D = cumulative_trapezoid(table.nu * cos_d, t, initial=0.0)
        self.f = cumulative_trapezoid(table.nu * sin_d, t, initial=0.0)
        self.zeta = cumulative_trapezoid(table.eta * sin_d, t, initial=0.0)

    def at(self, t_tilde: float) -> tuple[float, float, float]:
        t = self.t
        if t_tilde < 0.0 or t_tilde > self.t_max * (1 + 1e-12) + 1e-12:
            raise CoverageError(
                f"t={t_tilde:.6g} outside tabulated range [0, {self.t_max:g}]")
        x = min(t_tilde, self.t_max)
        i = int(np.searchsorted(t, x, side="right")) - 1
        i = min(max(i, 0), len(t) - 2)
        w = (x - t[i]) / (t[i + 1] - t[i])
        return (self.D[i] + w * (self.D[i + 1] - self.D[i]),
                self.f[i] + w * (self.f[i + 1] - self.f[i]),
                self.zeta[i] + w * (self.zeta[i + 1] - self.zeta[i]))


def coefficients(table: KernelTable, delta_ratio: float,
                 t_tilde: float) -> Coefficients:
    """D, f, zeta at one time; see CoefficientTable for the bulk path."""
    d, f, z = CoefficientTable(table, delta_ratio).at(t_tilde)
    return Coefficients(t_tilde, d, f, z)


def rhs(rho: np.ndarray, c: Coefficients, delta_ratio: float) -> np.ndarray:
    """Right-hand side by explicit 2x2 matrix algebra.

    Hermitian and traceless for Hermitian input, up to rounding.
    """
    h_comm = SZ @ rho - rho @ SZ
    sx_rho = SX @ rho
    rho_sx = rho @ SX
    # [SX, [SX, rho]]
    inner_x = sx_rho - rho_sx
    dd = SX @ inner_x - inner_x @ SX
    # [SX, [SY, rho]] and [SX, {SY, rho}]
    inner_y = SY @ rho - rho @ SY
    anti_y = SY @ rho + rho @ SY
    ff = SX @ inner_y - inner_y @ SX
    zz = SX @ anti_y - anti_y @ SX
    return (-0.5j * delta_ratio * h_comm - c.D * dd - c.f * ff
            + 1j * c.zeta * zz)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Density matrices sampled on uniform cycle fractions.

    rho holds the symmetrized, trace-renormalized states; the raw
    integrator deviations before that cleanup are kept in the metadata
    (max_trace_dev, max_herm_dev) as integrator health measures.
    """

    t: np.ndarray                  # (n,)
    rho: np.ndarray                # (n, 2, 2) complex
    purity: np.ndarray             # (n,)
    system: SystemParams
    geometry: GeometryConfig
    table_digest: str
    n_cycles: int
    samples_per_cycle: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValidationError("trajectory", "time must strictly increase")
        for arr in (self.t, self.rho, self.purity):
            arr.setflags(write=False)

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.system.delta_ratio

    def bloch(self) -> np.ndarray:
        """(n, 3) reported Bloch coordinates, |g> at the north pole."""
        x = np.einsum("nij,ji->n", self.rho, SX).real
        y = np.einsum("nij,ji->n", self.rho, SY).real
        z = np.einsum("nij,ji->n", self.rho, SZ).real
        return np.column_stack([x, -y, -z])

    def cycle_index(self, n: int) -> int:
        """Sample index of the N-th cycle boundary."""
        if not 0 <= n <= self.n_cycles:
            raise CoverageError(f"cycle {n} outside 0..{self.n_cycles}")
        return n * self.samples_per_cycle


def initial_state(theta0: float) -> np.ndarray:
    psi = np.array([np.cos(theta0), np.sin(theta0)], dtype=complex)
    return np.outer(psi, psi.conj())


def evolve(system: SystemParams, geometry: GeometryConfig,
           table: KernelTable | None, n_cycles: int,
           samples_per_cycle: int = 128, rtol: float = 1e-9,
           atol: float = 1e-12) -> Trajectory:
    """Integrate the master equation over n_cycles unitary periods.

    table=None (or zero coupling) runs the uncoupled unitary dynamics.
    DOP853 with dense output; Hermiticity and unit trace re-enforced by
    symmetrization at the output samples only.
    """
    if n_cycles < 1:
        raise ValidationError("n_cycles", "must be >= 1")
    if samples_per_cycle < 8:
        raise ValidationError("samples_per_cycle", "must be >= 8")
    delta = system.delta_ratio
    period = 2.0 * np.pi / delta
    t_end = n_cycles * period

    if table is not None and system.coupling_g != 0.0:
        if table.t_max < t_end - 1e-9:
            raise CoverageError(
                f"table covers t <= {table.t_max:g} but the run needs "
                f"{t_end:g}; retabulate with a longer horizon")
        coeff = CoefficientTable(table, delta)
        digest = table.config_hash
    else:
        coeff = None
        digest = ZERO_TABLE_DIGEST

    half_delta = 0.5 * delta

    def fun(t, y):
        rho = y.view(complex).reshape(2, 2)
        h_comm = SZ @ rho - rho @ SZ
        out = -1j * half_delta * h_comm
        if coeff is not None:
            d, f, z = coeff.at(t)
            inner_x = SX @ rho - rho @ SX
            out -= d * (SX @ inner_x - inner_x @ SX)
            inner_y = SY @ rho - rho @ SY
            out -= f * (SX @ inner_y - inner_y @ SX)
            anti_y = SY @ rho + rho @ SY
            out += 1j * z * (SX @ anti_y - anti_y @ SX)
        return out.reshape(-1).view(float)

    rho0 = initial_state(system.theta0)
    y0 = rho0.reshape(-1).view(float).copy()
    ts = np.linspace(0.0, t_end, n_cycles * samples_per_cycle + 1)
    sol = solve_ivp(fun, (0.0, t_end), y0, method="DOP853", t_eval=ts,
                    dense_output=True, rtol=rtol, atol=atol)
    if not sol.success:
        t_fail = float(sol.t[-1]) if len(sol.t) else 0.0
        cvals = coeff.at(min(t_fail, coeff.t_max)) if coeff else (0.0,) * 3
        raise StepSizeError(t_fail, cvals)

    raw = np.ascontiguousarray(sol.y.T).view(complex).reshape(-1, 2, 2)
    herm_dev = float(np.max(np.abs(raw - raw.conj().transpose(0, 2, 1))))
    traces = np.einsum("nii->n", raw)
    trace_dev = float(np.max(np.abs(traces - 1.0)))

    rho = 0.5 * (raw + raw.conj().transpose(0, 2, 1))
    rho /= np.einsum("nii->n", rho).real[:, None, None]
    purity = np.einsum("nij,nji->n", rho, rho).real
    worst = float(np.max(purity))
    if worst > 1.0 + PURITY_EXCURSION_TOL:
        raise PurityExcursionError(
            f"purity reached {worst:.8f}; coupling too strong for the "
            f"weak-coupling equation of motion")

    return Trajectory(
        t=ts, rho=rho, purity=purity, system=system, geometry=geometry,
        table_digest=digest, n_cycles=n_cycles,
        samples_per_cycle=samples_per_cycle,
        metadata={"rtol": rtol, "atol": atol,
                  "max_trace_dev": trace_dev, "max_herm_dev": herm_dev,
                  "nfev": int(sol.nfev)})
