"""Parameter-grid sweeps, the velocity scaling fit, and coupling calibration."""

from __future__ import annotations

import dataclasses
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (InsufficientPointsError, NoBracketError,
                     PurityExcursionError, QfgpError, SweepBudgetError,
                     ValidationError, ZeroCorrectionError)
from .kernels import KernelConfig, KernelTable, scale_table, tabulate
from .params import SystemParams
from .phase import PhaseSeries, phase_series

ENV_WORKERS = "QFGP_WORKERS"
DEFAULT_MAX_POINTS = 256

# canonical axis order; the Cartesian grid iterates the last axis fastest
AXIS_ORDER = ("u", "alpha", "gamma_dip", "theta0", "gamma_ratio", "n_cycles")


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit argument, else QFGP_WORKERS, else cpu count."""
    if workers is None:
        env = os.environ.get(ENV_WORKERS, "").strip()
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ValidationError(ENV_WORKERS, f"not an integer: {env!r}")
        else:
            workers = os.cpu_count() or 1
    if workers < 1:
        raise ValidationError("workers", "must be >= 1")
    return workers


@dataclass(frozen=True)
class SweepSpec:
    """A base configuration plus named value lists to grid over.

    Axis keys must come from AXIS_ORDER.  `u`, `alpha`, `gamma_dip` vary
    the geometry, `theta0` the initial state, `gamma_ratio` the material
    damping, and `n_cycles` the run length; everything else is taken from
    the base system and kernel config unchanged.
    """

    system: SystemParams
    kernel_config: KernelConfig
    n_cycles: int
    axes: dict = field(default_factory=dict)
    samples_per_cycle: int = 128
    dt: float = 0.02
    rtol: float = 1e-9
    atol: float = 1e-12
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        if self.n_cycles < 1:
            raise ValidationError("n_cycles", "must be >= 1")
        clean = {}
        for key, values in self.axes.items():
            if key not in AXIS_ORDER:
                raise ValidationError(
                    "axes", f"unknown axis {key!r}; allowed: {AXIS_ORDER}")
            values = tuple(values)
            if not values:
                raise ValidationError("axes", f"axis {key!r} is empty")
            if key == "n_cycles":
                if any(int(v) != v or v < 1 for v in values):
                    raise ValidationError(
                        "axes", "n_cycles values must be positive integers")
                clean[key] = tuple(int(v) for v in values)
            else:
                if not all(math.isfinite(float(v)) for v in values):
                    raise ValidationError(
                        "axes", f"axis {key!r} holds non-finite values")
                clean[key] = tuple(float(v) for v in values)
        object.__setattr__(self, "axes", clean)
        if self.size > self.max_points:
            raise SweepBudgetError(
                f"grid has {self.size} points, budget is {self.max_points}")

    @property
    def axis_names(self) -> tuple:
        return tuple(k for k in AXIS_ORDER if k in self.axes)

    @property
    def size(self) -> int:
        n = 1
        for key in self.axes:
            n *= len(self.axes[key])
        return n

    def grid(self):
        """Yield (index, coords) over the Cartesian product in canonical order."""
        names = self.axis_names
        lists = [self.axes[k] for k in names]
        for index, combo in enumerate(itertools.product(*lists)):
            yield index, dict(zip(names, combo))

    def point_inputs(self, coords: dict):
        """Materialize (system, kernel_config, n_cycles) for one grid point."""
        system = self.system
        kcfg = self.kernel_config
        geometry = kcfg.geometry
        material = kcfg.material
        if "u" in coords:
            geometry = dataclasses.replace(geometry, u=coords["u"])
        if "alpha" in coords:
            geometry = dataclasses.replace(geometry, alpha=coords["alpha"])
        if "gamma_dip" in coords:
            geometry = dataclasses.replace(
                geometry, gamma_dip=coords["gamma_dip"])
        if "gamma_ratio" in coords:
            material = dataclasses.replace(
                material, gamma_ratio=coords["gamma_ratio"])
        if "theta0" in coords:
            system = dataclasses.replace(system, theta0=coords["theta0"])
        kcfg = dataclasses.replace(kcfg, geometry=geometry, material=material)
        return system, kcfg, coords.get("n_cycles", self.n_cycles)


@dataclass(frozen=True, eq=False)
class SweepPoint:
    index: int
    coords: dict
    series: PhaseSeries | None
    error: str | None = None


@dataclass(frozen=True, eq=False)
class SweepResult:
    spec: SweepSpec
    points: tuple

    @property
    def failures(self) -> list:
        return [(p.index, p.error) for p in self.points if p.error is not None]

    def series(self) -> list:
        return [p.series for p in self.points if p.series is not None]

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


def _static_variant(kcfg: KernelConfig) -> KernelConfig:
    geometry = dataclasses.replace(kcfg.geometry, u=0.0)
    return dataclasses.replace(kcfg, geometry=geometry)


def _run_point(args):
    # top-level so the process pool can pickle it
    (index, system, kcfg, n_cycles, spc, dt, rtol, atol, tables) = args
    try:
        series = phase_series(system, kcfg, n_cycles, spc, dt, rtol, atol,
                              tables=tables)
        return index, series, None
    except Exception as exc:  # recorded per point, the sweep continues
        return index, None, f"{type(exc).__name__}: {exc}"


def run_sweep(spec: SweepSpec, workers: int | None = None,
              cache_dir=None) -> SweepResult:
    """Evaluate phase_series on every grid point of `spec`.

    Kernel tables are tabulated once in the parent, each at the longest
    horizon any point needs, and shared with the workers; results come
    back ordered by grid index regardless of scheduling.
    """
    workers = resolve_workers(workers)
    period = 2.0 * np.pi / spec.system.delta_ratio

    jobs = []
    needed: dict = {}  # digest -> [config, t_need]
    for index, coords in spec.grid():
        system, kcfg, n_cycles = spec.point_inputs(coords)
        t_need = n_cycles * period
        jobs.append((index, coords, system, kcfg, n_cycles))
        if kcfg.coupling_g != 0.0:
            for cfg in (kcfg, _static_variant(kcfg)):
                entry = needed.setdefault(cfg.digest(), [cfg, 0.0])
                entry[1] = max(entry[1], t_need)

    tables: dict = {}
    for digest, (cfg, t_need) in sorted(needed.items()):
        tables[digest] = tabulate(cfg, t_need, spec.dt,
                                  delta_ratio=spec.system.delta_ratio,
                                  workers=workers, cache_dir=cache_dir)

    args = []
    for index, coords, system, kcfg, n_cycles in jobs:
        if kcfg.coupling_g == 0.0:
            pair = None
        else:
            pair = (tables[kcfg.digest()],
                    tables[_static_variant(kcfg).digest()])
        args.append((index, system, kcfg, n_cycles, spec.samples_per_cycle,
                     spec.dt, spec.rtol, spec.atol, pair))

    if workers == 1 or len(args) <= 1:
        raw = [_run_point(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_point, args))

    raw.sort(key=lambda r: r[0])
    points = tuple(SweepPoint(index=r[0], coords=jobs[r[0]][1],
                              series=r[1], error=r[2]) for r in raw)
    return SweepResult(spec=spec, points=points)


@dataclass(frozen=True)
class FitResult:
    exponent: float
    prefactor: float
    r_squared: float
    range: tuple

    def __post_init__(self):
        if not (0.0 <= self.r_squared <= 1.0 + 1e-12):
            raise ValidationError("r_squared", "must lie in [0, 1]")


VELOCITY_FLOOR = 1e-14


def _series_list(series) -> list:
    if isinstance(series, SweepResult):
        return series.series()
    out = []
    for item in series:
        out.append(item.series if isinstance(item, SweepPoint) else item)
    return [s for s in out if s is not None]


def fit_velocity_scaling(series, orientation: tuple | None = None,
                         N: int | None = None) -> FitResult:
    """Least-squares power law of |velocity correction| against u.

    `series` is a sweep result or any iterable of phase series;
    `orientation` optionally filters on (alpha, gamma_dip); the fit uses
    the value at cycle N (default: the last cycle of each series).
    """
    xs, ys = [], []
    n_positive = 0
    for ps in _series_list(series):
        geo = ps.config.geometry
        if orientation is not None:
            alpha, gamma_dip = orientation
            if not (math.isclose(geo.alpha, alpha, abs_tol=1e-12)
                    and math.isclose(geo.gamma_dip, gamma_dip, abs_tol=1e-12)):
                continue
        if geo.u <= 0.0:
            continue
        n_positive += 1
        n = int(ps.cycles[-1]) if N is None else int(N)
        dv = abs(ps.at_cycle(n)["delta_phi_velocity"])
        if dv < VELOCITY_FLOOR:
            continue
        xs.append(math.log(geo.u))
        ys.append(math.log(dv))

    if n_positive and not xs:
        raise ZeroCorrectionError(
            "all velocity corrections sit below the numerical floor")
    if len(set(xs)) < 4:
        raise InsufficientPointsError(
            f"need >= 4 distinct u > 0 points, have {len(set(xs))}")

    x = np.array(xs)
    y = np.array(ys)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = y - y.mean()
    ss_tot = float(total @ total)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return FitResult(exponent=float(slope),
                     prefactor=float(np.exp(intercept)),
                     r_squared=max(0.0, min(1.0, r2)),
                     range=(float(np.exp(x.min())), float(np.exp(x.max()))))


@dataclass(frozen=True)
class CalibrationResult:
    g: float
    achieved_ratio: float
    target: tuple
    history: tuple  # (g, ratio) per probe, in evaluation order

    @property
    def iterations(self) -> int:
        return len(self.history)


def calibrate_coupling(target: tuple, system: SystemParams | None = None,
                       kernel_config: KernelConfig | None = None, *,
                       bracket: tuple = (1e-6, 1e-1), tol: float = 0.005,
                       samples_per_cycle: int = 128, dt: float = 0.02,
                       rtol: float = 1e-9, atol: float = 1e-12,
                       evaluator=None, cache_dir=None,
                       workers: int | None = None,
                       max_iter: int = 64) -> CalibrationResult:
    """Bisect the coupling g until |delta_phi / phi_c| at (u, N) hits `ratio`.

    The kernels are linear in g, so the default evaluator tabulates once
    at a reference coupling and rescales per probe.  `evaluator(g)`, when
    given, replaces the full pipeline (used by tests).
    """
    u_target, n_target, ratio_target = target
    n_target = int(n_target)
    if not 0.0 < ratio_target < 1.0:
        raise ValidationError("ratio", "target ratio must lie in (0, 1)")
    if n_target < 1:
        raise ValidationError("N", "must be >= 1")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0.0 < lo < hi:
        raise ValidationError("bracket", "need 0 < lo < hi")

    if evaluator is None:
        if system is None or kernel_config is None:
            raise ValidationError(
                "cfg", "system and kernel_config required without evaluator")
        g_ref = hi  # fixed here; `hi` itself moves during bisection
        geo_u = dataclasses.replace(kernel_config.geometry, u=u_target)
        cfg_ref = dataclasses.replace(kernel_config, geometry=geo_u,
                                      coupling_g=g_ref)
        cfg_ref0 = _static_variant(cfg_ref)
        t_need = n_target * 2.0 * np.pi / system.delta_ratio
        tab_ref = tabulate(cfg_ref, t_need, dt,
                           delta_ratio=system.delta_ratio,
                           workers=workers, cache_dir=cache_dir)
        tab_ref0 = tabulate(cfg_ref0, t_need, dt,
                            delta_ratio=system.delta_ratio,
                            workers=workers, cache_dir=cache_dir)

        def evaluator(g: float) -> float:
            cfg_g = dataclasses.replace(cfg_ref, coupling_g=g)
            cfg_g0 = dataclasses.replace(cfg_ref0, coupling_g=g)
            pair = (scale_table(tab_ref, g / g_ref, cfg_g.digest()),
                    scale_table(tab_ref0, g / g_ref, cfg_g0.digest()))
            sys_g = dataclasses.replace(system, coupling_g=g)
            ps = phase_series(sys_g, cfg_g, n_target, samples_per_cycle,
                              dt, rtol, atol, tables=pair)
            row = ps.at_cycle(n_target)
            return abs(row["delta_phi"] / row["phi_c"])

    history = []

    def probe(g: float) -> float:
        try:
            r = float(evaluator(g))
        except PurityExcursionError:
            # coupling strong enough to break the weak-coupling equation;
            # for bracketing purposes the ratio is off-scale high
            r = math.inf
        history.append((g, r))
        return r

    r_lo = probe(lo)
    r_hi = probe(hi)
    if r_lo >= r_hi:
        raise NoBracketError(lo, hi, r_lo, r_hi, ratio_target)
    if not r_lo <= ratio_target <= r_hi:
        raise NoBracketError(lo, hi, r_lo, r_hi, ratio_target)

    if abs(r_lo - ratio_target) <= tol:
        return CalibrationResult(lo, r_lo, target, tuple(history))
    if abs(r_hi - ratio_target) <= tol:
        return CalibrationResult(hi, r_hi, target, tuple(history))

    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)  # bisection in log g
        r = probe(mid)
        if abs(r - ratio_target) <= tol:
            return CalibrationResult(mid, r, target, tuple(history))
        if r < ratio_target:
            lo = mid
        else:
            hi = mid
    raise QfgpError(
        f"calibration did not reach |ratio - {ratio_target}| <= {tol} "
        f"in {max_iter} bisection steps")
