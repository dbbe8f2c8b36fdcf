"""Command-line driver: run the pipeline stages and persist results.

Every output file starts with '#'-prefixed provenance lines (version,
timestamp, command, config digest, tolerances, and the full canonical
config as one JSON line) followed by a CSV data section at 17 significant
digits.  The embedded config is sufficient to re-run the computation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .cache import resolve_cache_dir
from .config import RunConfig, parse_config
from .errors import QfgpError
from .evolution import evolve
from .figures import DATASET_BUILDERS, RENDERERS
from .kernels import inner_k_integral, tabulate
from .params import g_factor, surface_response
from .phase import eigentrack, geometric_phase, phase_series
from .sweeps import SweepSpec, calibrate_coupling, run_sweep


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _provenance(cfg: RunConfig, command: str, extra=()) -> list:
    num = cfg.numerics
    lines = [
        ("qfgp", __version__),
        ("created", _now()),
        ("command", command),
        ("config-digest", cfg.digest()),
        ("tolerances", f"rtol={num.rtol:g} atol={num.atol:g} "
                       f"omega_tol={num.omega_tol:g}"),
        ("config", cfg.canonical_json()),
    ]
    lines.extend(extra)
    return lines


def write_csv(path: str, columns, rows, header) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in header:
            fh.write(f"# {key}: {value}\n")
        fh.write(f"# columns: {','.join(columns)}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _outdir(cfg: RunConfig) -> str:
    outdir = cfg.output.outdir
    os.makedirs(outdir, exist_ok=True)
    return outdir


def _cache(cfg: RunConfig) -> str | None:
    return resolve_cache_dir(cfg.output.cache_dir, cfg.output.outdir)


def cmd_kernels(cfg: RunConfig, args) -> int:
    kcfg = cfg.kernel_config()
    table = tabulate(kcfg, cfg.resolved_t_max(), cfg.numerics.dt,
                     delta_ratio=cfg.system.delta_ratio,
                     workers=args.workers, cache_dir=_cache(cfg))
    path = os.path.join(_outdir(cfg), "kernels.csv")
    rows = zip(table.t, table.nu, table.eta)
    write_csv(path, ("t", "nu", "eta"), rows,
              _provenance(cfg, "kernels",
                          [("kernel-digest", table.config_hash),
                           ("tail-estimate", _fmt(table.tail_estimate))]))
    print(f"wrote {path} ({len(table.t)} rows)")
    return 0


def cmd_evolve(cfg: RunConfig, args) -> int:
    num = cfg.numerics
    if cfg.system.coupling_g == 0.0:
        table = None
    else:
        table = tabulate(cfg.kernel_config(),
                         num.n_cycles * cfg.system.period, num.dt,
                         delta_ratio=cfg.system.delta_ratio,
                         workers=args.workers, cache_dir=_cache(cfg))
    traj = evolve(cfg.system, cfg.geometry, table, num.n_cycles,
                  num.samples_per_cycle, num.rtol, num.atol)
    bloch = traj.bloch()
    cycle = traj.t / cfg.system.period
    rho_eg = traj.rho[:, 1, 0]
    rows = zip(traj.t, cycle, bloch[:, 0], bloch[:, 1], bloch[:, 2],
               traj.purity, rho_eg.real, rho_eg.imag)
    outdir = _outdir(cfg)
    path = os.path.join(outdir, "trajectory.csv")
    write_csv(path, ("t", "cycle", "x", "y", "z", "purity",
                     "re_rho_eg", "im_rho_eg"), rows,
              _provenance(cfg, "evolve",
                          [("kernel-digest", traj.table_digest)]))
    write_json(os.path.join(outdir, "trajectory.json"),
               {"config": cfg.canonical_dict(),
                "config_digest": cfg.digest(),
                "kernel_digest": traj.table_digest,
                "n_cycles": traj.n_cycles,
                "samples_per_cycle": traj.samples_per_cycle,
                "metadata": traj.metadata})
    print(f"wrote {path} ({len(traj.t)} rows)")
    return 0


def cmd_phase(cfg: RunConfig, args) -> int:
    num = cfg.numerics
    series = phase_series(cfg.system, cfg.kernel_config(), num.n_cycles,
                          num.samples_per_cycle, num.dt, num.rtol, num.atol,
                          cache_dir=_cache(cfg), workers=args.workers,
                          restart_each_cycle=num.restart_each_cycle)
    rows = zip(series.cycles, series.phi_g, series.phi_c, series.delta_phi,
               series.delta_phi_static, series.delta_phi_velocity)
    outdir = _outdir(cfg)
    path = os.path.join(outdir, "phase.csv")
    write_csv(path, ("N", "phi_g", "phi_c", "delta_phi",
                     "delta_phi_static", "delta_phi_velocity"), rows,
              _provenance(cfg, "phase"))
    write_json(os.path.join(outdir, "phase.json"),
               {"config": cfg.canonical_dict(),
                "config_digest": cfg.digest(),
                "digests": series.digests,
                "metadata": series.metadata})
    print(f"wrote {path} ({len(series.cycles)} rows)")
    return 0


def _parse_axes(pairs) -> dict:
    axes = {}
    for item in pairs:
        if "=" not in item:
            raise QfgpError(f"--axis expects name=v1,v2,...: {item!r}")
        name, _, raw = item.partition("=")
        try:
            axes[name.strip()] = [float(v) for v in raw.split(",") if v]
        except ValueError:
            raise QfgpError(f"--axis {name}: values must be numbers")
    return axes


def cmd_sweep(cfg: RunConfig, args) -> int:
    num = cfg.numerics
    axes = _parse_axes(args.axis or [])
    if not axes:
        raise QfgpError("sweep needs at least one --axis name=v1,v2,...")
    spec = SweepSpec(system=cfg.system, kernel_config=cfg.kernel_config(),
                     n_cycles=num.n_cycles, axes=axes,
                     samples_per_cycle=num.samples_per_cycle, dt=num.dt,
                     rtol=num.rtol, atol=num.atol)
    result = run_sweep(spec, workers=args.workers, cache_dir=_cache(cfg))

    axis_names = list(spec.axis_names)
    rows = []
    for point in result:
        if point.series is None:
            continue
        ps = point.series
        coords = [point.coords[a] for a in axis_names]
        for i, n in enumerate(ps.cycles):
            rows.append((point.index, *coords, int(n), ps.phi_g[i],
                         ps.phi_c[i], ps.delta_phi[i],
                         ps.delta_phi_static[i],
                         ps.delta_phi_velocity[i]))
    outdir = _outdir(cfg)
    path = os.path.join(outdir, "sweep.csv")
    write_csv(path, ("index", *axis_names, "N", "phi_g", "phi_c",
                     "delta_phi", "delta_phi_static",
                     "delta_phi_velocity"), rows,
              _provenance(cfg, "sweep",
                          [("axes", json.dumps(spec.axes, sort_keys=True))]))
    write_json(os.path.join(outdir, "sweep.json"),
               {"config": cfg.canonical_dict(),
                "config_digest": cfg.digest(),
                "axes": spec.axes, "size": spec.size,
                "failures": result.failures})
    print(f"wrote {path} ({spec.size} points, "
          f"{len(result.failures)} failed)")
    if result.failures:
        _emit_error("SweepFailure",
                    f"{len(result.failures)} grid points failed",
                    detail=result.failures)
        return 1
    return 0


def cmd_figure(cfg: RunConfig, args) -> int:
    name = f"fig{args.number}"
    builder = DATASET_BUILDERS[name]
    data = builder(workers=args.workers, cache_dir=_cache(cfg))
    outdir = _outdir(cfg)
    path = os.path.join(outdir, f"{name}_data.csv")
    write_csv(path, data.columns, data.rows,
              _provenance(cfg, f"figure {args.number}",
                          [("preset", json.dumps(data.metadata,
                                                 sort_keys=True))]))
    made = [path]
    if cfg.output.plot:
        png = os.path.join(outdir, f"{name}.png")
        RENDERERS[name](data, png)
        made.append(png)
    print(f"wrote {', '.join(made)}")
    return 0


def cmd_calibrate(cfg: RunConfig, args) -> int:
    num = cfg.numerics
    target = (args.u, args.cycles, args.ratio)
    result = calibrate_coupling(
        target, cfg.system, cfg.kernel_config(),
        bracket=(args.bracket_lo, args.bracket_hi), tol=args.tol,
        samples_per_cycle=num.samples_per_cycle, dt=num.dt,
        rtol=num.rtol, atol=num.atol, cache_dir=_cache(cfg),
        workers=args.workers)
    outdir = _outdir(cfg)
    path = os.path.join(outdir, "calibration.json")
    write_json(path, {
        "qfgp": __version__, "created": _now(),
        "config": cfg.canonical_dict(), "config_digest": cfg.digest(),
        "target": {"u": args.u, "N": args.cycles, "ratio": args.ratio},
        "g": result.g, "achieved_ratio": result.achieved_ratio,
        "iterations": result.iterations,
        "history": [list(h) for h in result.history]})
    print(f"g = {result.g:.17g} (ratio {result.achieved_ratio:.6f} after "
          f"{result.iterations} probes); wrote {path}")
    return 0


def cmd_validate(cfg: RunConfig, args) -> int:
    """Fast invariant suite; prints one line per check."""
    import dataclasses as _dc

    from scipy.integrate import quad

    from .params import GeometryConfig, SystemParams, preset
    failures = []

    def check(label, ok, detail=""):
        print(f"{'ok' if ok else 'FAIL'}: {label}"
              + (f" ({detail})" if detail and not ok else ""))
        if not ok:
            failures.append(label)

    rng = np.random.default_rng(20240917)

    # closed-form inner k-integral against oscillatory-weighted quadrature;
    # the e^{-2k} tail is below 1e-50 by k = 60
    worst = 0.0
    for b in (0.0, 0.5, -2.0, 10.0, -100.0):
        parts = [quad(lambda k: k * k * np.exp(-2 * k), 0, 60,
                      weight=w, wvar=b, limit=400,
                      epsabs=1e-13, epsrel=1e-11)[0]
                 for w in ("cos", "sin")]
        val = inner_k_integral(b)
        worst = max(worst, abs(val - (parts[0] + 1j * parts[1])) / abs(val))
    check("inner k-integral closed form", worst < 1e-10, f"rel {worst:.2e}")

    # dipole factor identity
    th, al, ga = (rng.uniform(-np.pi, np.pi, size=(3, 100_000)))
    dev = np.max(np.abs(g_factor(th, al, ga)
                        - (np.sin(al) ** 2 * np.cos(th - ga) ** 2
                           + np.cos(al) ** 2)))
    check("dipole factor identity", dev < 1e-12, f"abs {dev:.2e}")

    # surface response at the Drude resonance
    m = surface_response(1.0, preset("reference-metal"))
    check("surface response peak", abs(m - 20.0) < 1e-12, f"{m!r}")

    # unitary phase, one cycle at theta_B = 60 deg
    system = SystemParams(delta_ratio=0.9, theta0=np.deg2rad(30.0),
                          coupling_g=0.0)
    geometry = GeometryConfig(alpha=np.pi / 2, gamma_dip=0.0,
                              gap_a=3e-9, u=0.0)
    traj = evolve(system, geometry, None, 1, 2048)
    phi = geometric_phase(eigentrack(traj), traj.t[-1])
    target = np.pi * (1.0 - np.cos(np.deg2rad(60.0)))
    err = min(abs(phi + 2 * np.pi * k - target) for k in (-1, 0, 1))
    check("unitary closed-form phase", err < 1e-6, f"err {err:.2e}")

    # short coupled run conserves trace and hermiticity
    run_cfg = parse_config(None)
    sys3 = _dc.replace(run_cfg.system, coupling_g=1e-3)
    kcfg = _dc.replace(run_cfg.kernel_config(), coupling_g=1e-3)
    series = phase_series(sys3, kcfg, 3, cache_dir=None)
    check("trace conservation",
          series.metadata["max_trace_dev"] < 1e-9,
          f"{series.metadata['max_trace_dev']:.2e}")
    check("hermiticity",
          series.metadata["max_herm_dev"] < 1e-10,
          f"{series.metadata['max_herm_dev']:.2e}")
    check("static decomposition",
          float(np.max(np.abs(series.delta_phi_velocity))) == 0.0,
          "u = 0 runs must coincide")

    # gauge invariance of the phase chain, one random phase per branch
    track = eigentrack(traj)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi,
                                     size=(track.vecs.shape[0], 1, 2)))
    gauged = _dc.replace(track, vecs=track.vecs * phases,
                         t=track.t.copy(), eps=track.eps.copy())
    dphi = abs(geometric_phase(gauged, traj.t[-1]) - phi)
    check("gauge invariance", dphi < 1e-12, f"{dphi:.2e}")

    if failures:
        _emit_error("ValidationFailure",
                    f"{len(failures)} checks failed", detail=failures)
        return 1
    print("all checks passed")
    return 0


def _emit_error(kind: str, message: str, detail=None) -> None:
    record = {"error": kind, "message": message}
    if detail is not None:
        record["detail"] = detail
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qfgp",
        description="Geometric-phase corrections of a moving two-level "
                    "system near a lossy dielectric sheet.")
    parser.add_argument("--config", metavar="PATH",
                        help="JSON config file (or inline JSON)")
    parser.add_argument("--set", action="append", default=[],
                        metavar="SEC.KEY=VAL",
                        help="override one config key (repeatable)")
    parser.add_argument("--outdir", metavar="DIR",
                        help="shortcut for --set output.outdir=DIR")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: QFGP_WORKERS "
                             "or the cpu count)")
    parser.add_argument("--no-plot", action="store_true",
                        help="skip PNG rendering on the figure command")

    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("kernels", help="tabulate the noise/dissipation kernels")
    sub.add_parser("evolve", help="integrate one trajectory")
    sub.add_parser("phase", help="per-cycle phase decomposition")

    p_sweep = sub.add_parser("sweep", help="grid of phase series")
    p_sweep.add_argument("--axis", action="append", metavar="NAME=V1,V2,...",
                         help="sweep axis (repeatable)")

    p_fig = sub.add_parser("figure", help="emit a bundled figure dataset")
    p_fig.add_argument("number", type=int, choices=(2, 3, 4, 7))

    p_cal = sub.add_parser("calibrate",
                           help="fit the coupling to a phase-ratio target")
    p_cal.add_argument("--u", type=float, default=0.03)
    p_cal.add_argument("--cycles", type=int, default=20)
    p_cal.add_argument("--ratio", type=float, default=0.6)
    p_cal.add_argument("--bracket-lo", type=float, default=1e-6)
    p_cal.add_argument("--bracket-hi", type=float, default=1e-1)
    p_cal.add_argument("--tol", type=float, default=0.005)

    sub.add_parser("validate", help="run the fast invariant suite")
    return parser


_COMMANDS = {
    "kernels": cmd_kernels,
    "evolve": cmd_evolve,
    "phase": cmd_phase,
    "sweep": cmd_sweep,
    "figure": cmd_figure,
    "calibrate": cmd_calibrate,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    overrides = list(args.set)
    if args.outdir:
        overrides.append(f"output.outdir={args.outdir}")
    if args.no_plot:
        overrides.append("output.plot=false")

    try:
        cfg = parse_config(args.config, overrides)
        return _COMMANDS[args.subcommand](cfg, args)
    except QfgpError as exc:
        record_kind = type(exc).__name__
        _emit_error(record_kind, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
