"""End-to-end gate: one test per advertised guarantee of the package.

Run with `pytest -v tests/test_acceptance.py` to get one pass/fail line
per guarantee.  The tests print the measured numbers they judge, so a
failure log carries its own evidence.
"""

import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import quad

from bruteforce import ORACLE_POINTS, brute_kernels
from qfgp.cli import main
from qfgp.evolution import Trajectory, evolve
from qfgp.figures import CALIBRATED_COUPLING, fig3_dataset, fig7_dataset
from qfgp.kernels import KernelConfig, inner_k_integral, kernel_pair, tabulate
from qfgp.params import GeometryConfig, SystemParams, g_factor, preset
from qfgp.phase import eigentrack, geometric_phase, phase_series
from qfgp.sweeps import calibrate_coupling, fit_velocity_scaling

DELTA = 0.9
PERIOD = 2.0 * np.pi / DELTA
WORKERS = 4


def _system(g, theta0=np.deg2rad(45.0)):
    return SystemParams(delta_ratio=DELTA, theta0=theta0, coupling_g=g)


def _kcfg(u, alpha=np.pi / 2, gamma_dip=0.0, g=CALIBRATED_COUPLING,
          gamma_ratio=None):
    material = preset("reference-metal")
    if gamma_ratio is not None:
        material = dataclasses.replace(material, gamma_ratio=gamma_ratio)
    return KernelConfig(
        material=material,
        geometry=GeometryConfig(alpha=alpha, gamma_dip=gamma_dip,
                                gap_a=3e-9, u=u),
        coupling_g=g)


@pytest.fixture(scope="module")
def damping_alpha_runs():
    """30-cycle trajectories at u = 0.007, theta0 = 45 deg, calibrated
    coupling, over damping {0.05, 0.1} x dipole angle {0.1, pi/2}."""
    runs = {}
    for gamma_ratio in (0.05, 0.1):
        for alpha in (0.1, np.pi / 2):
            cfg = _kcfg(u=0.007, alpha=alpha, gamma_ratio=gamma_ratio)
            table = tabulate(cfg, 30 * PERIOD, 0.02, delta_ratio=DELTA,
                             workers=WORKERS)
            runs[(gamma_ratio, alpha)] = evolve(
                _system(CALIBRATED_COUPLING), cfg.geometry, table, 30, 128)
    return runs


@pytest.fixture(scope="module")
def orientation_sweeps():
    return fig3_dataset(workers=WORKERS)


def test_ac01_unitary_closed_form():
    for theta_b_deg in (30.0, 60.0, 90.0, 120.0):
        theta0 = np.deg2rad(theta_b_deg / 2.0)
        geometry = GeometryConfig(alpha=np.pi / 2, gamma_dip=0.0,
                                  gap_a=3e-9, u=0.0)
        traj = evolve(_system(0.0, theta0), geometry, None, 1, 4096)
        phi = geometric_phase(eigentrack(traj), traj.t[-1])
        target = np.pi * (1.0 - np.cos(np.deg2rad(theta_b_deg)))
        err = min(abs(phi - target + 2 * np.pi * k) for k in (-1, 0, 1))
        print(f"theta_B={theta_b_deg:5.1f} deg: phi={phi:+.9f} "
              f"err={err:.2e}")
        assert err < 1e-6


def test_ac02_kernel_reduction_against_bruteforce():
    worst = 0.0
    for t, u, alpha, gamma_dip, nu_frozen, eta_frozen in ORACLE_POINTS:
        cfg = _kcfg(u=u, alpha=alpha, gamma_dip=gamma_dip, g=1e-3)
        nu, eta = kernel_pair(t, cfg)
        # live dense-grid quadrature at reduced resolution
        nu_b, eta_b = brute_kernels(t, cfg, n_w=8001, n_k=4001,
                                    n_theta=128, k_max=30.0)
        scale = max(abs(nu_b), abs(eta_b))
        worst = max(worst, abs(nu - nu_b) / scale, abs(eta - eta_b) / scale)
        # and the frozen full-resolution values
        scale_f = max(abs(nu_frozen), abs(eta_frozen))
        worst = max(worst, abs(nu - nu_frozen) / scale_f,
                    abs(eta - eta_frozen) / scale_f)
    print(f"worst relative deviation over 10 points: {worst:.3e}")
    assert worst < 1e-6


def test_ac03_inner_k_integral_quadrature():
    worst = 0.0
    for b in (0.0, 0.37, -0.37, 1.0, -5.0, 20.0, -61.8, 100.0, -100.0):
        parts = [quad(lambda k: k * k * np.exp(-2 * k), 0, 60,
                      weight=w, wvar=b, limit=400,
                      epsabs=1e-13, epsrel=1e-11)[0]
                 for w in ("cos", "sin")]
        ref = parts[0] + 1j * parts[1]
        worst = max(worst, abs(inner_k_integral(b) - ref) / abs(ref))
    print(f"worst relative deviation over |b| <= 100: {worst:.3e}")
    assert worst < 1e-10


def test_ac04_orientation_weight_identity():
    rng = np.random.default_rng(20240917)
    th, al, ga = rng.uniform(-2 * np.pi, 2 * np.pi, size=(3, 1_000_000))
    ref = np.sin(al) ** 2 * np.cos(th - ga) ** 2 + np.cos(al) ** 2
    dev = float(np.max(np.abs(g_factor(th, al, ga) - ref)))
    print(f"max abs deviation over 1e6 triples: {dev:.3e}")
    assert dev < 1e-12


def test_ac05_conservation_suite(damping_alpha_runs):
    for (gamma_ratio, alpha), traj in damping_alpha_runs.items():
        trace_dev = traj.metadata["max_trace_dev"]
        herm_dev = traj.metadata["max_herm_dev"]
        print(f"gamma_ratio={gamma_ratio}, alpha={alpha:.2f}: "
              f"trace {trace_dev:.2e}, herm {herm_dev:.2e}")
        assert trace_dev < 1e-9
        assert herm_dev < 1e-10


def test_ac06_purity_trend(damping_alpha_runs):
    for gamma_ratio in (0.05, 0.1):
        drop_perp = 1.0 - np.min(
            damping_alpha_runs[(gamma_ratio, np.pi / 2)].purity)
        drop_near = 1.0 - np.min(
            damping_alpha_runs[(gamma_ratio, 0.1)].purity)
        print(f"gamma_ratio={gamma_ratio}: drop(alpha=0.1)={drop_near:.4e}"
              f" drop(alpha=pi/2)={drop_perp:.4e} "
              f"ratio={drop_perp / drop_near:.1f}")
        assert drop_near * 5.0 <= drop_perp


def test_ac07_quadratic_velocity_law(orientation_sweeps):
    series = []
    for alpha, gamma_dip, result in orientation_sweeps.payload["sweeps"]:
        if alpha == np.pi / 2 and gamma_dip == 0.0:
            series = [ps for ps in result.series()
                      if 0.002 <= ps.config.geometry.u <= 0.01]
    fit = fit_velocity_scaling(series, N=15)
    print(f"exponent={fit.exponent:.4f} r2={fit.r_squared:.6f} "
          f"u range {fit.range}")
    assert fit.exponent == pytest.approx(2.0, abs=0.2)
    assert fit.r_squared > 0.99


def test_ac08_orientation_ordering(orientation_sweeps):
    at_03 = {}
    for row in orientation_sweeps.rows:
        oi, alpha, gamma_dip, u = row[0], row[1], row[2], row[3]
        if u == 0.03:
            at_03[(alpha, gamma_dip)] = abs(row[7])  # |delta_phi|
    parallel = at_03[(np.pi / 2, 0.0)]
    crosswise = at_03[(np.pi / 2, np.pi / 2)]
    near_normal = at_03[(0.1, np.pi / 2)]
    print(f"|dphi|: (pi/2, 0) {parallel:.6f} > (pi/2, pi/2) "
          f"{crosswise:.6f} > (alpha=0.1) {near_normal:.6f}")
    assert parallel > crosswise > near_normal


def test_ac09_accumulation_and_calibrated_target():
    target = (0.03, 20, 0.6)
    result = calibrate_coupling(target, _system(1e-3, np.deg2rad(44.9)),
                                _kcfg(u=0.007, g=1e-3), workers=WORKERS)
    print(f"calibrated g* = {result.g:.17g} "
          f"(evaluator ratio {result.achieved_ratio:.6f}, "
          f"{result.iterations} probes)")

    # independent verification: full pipeline at g*, no table rescaling
    system = _system(result.g, np.deg2rad(44.9))
    series = phase_series(system, _kcfg(u=0.03, g=result.g), 20,
                          workers=WORKERS)
    row = series.at_cycle(20)
    ratio = abs(row["delta_phi"] / row["phi_c"])
    print(f"re-run |delta_phi / phi_c| = {ratio:.6f}")
    assert ratio == pytest.approx(0.60, abs=0.01)

    magnitudes = np.abs(series.delta_phi)
    assert np.all(np.diff(magnitudes[2:]) >= 0.0), \
        "|delta_phi(N)| must be non-decreasing for N >= 3"


def test_ac10_gauge_and_basis_invariance(damping_alpha_runs):
    traj = damping_alpha_runs[(0.1, np.pi / 2)]
    track = eigentrack(traj)
    phi = geometric_phase(track, traj.t[-1])

    rng = np.random.default_rng(404)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi,
                                     size=(track.vecs.shape[0], 1, 2)))
    gauged = dataclasses.replace(track, vecs=track.vecs * phases,
                                 t=track.t.copy(), eps=track.eps.copy())
    gauge_dev = abs(geometric_phase(gauged, traj.t[-1]) - phi)

    h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    h = h + h.conj().T
    w, v = np.linalg.eigh(h)
    u = v @ np.diag(np.exp(1j * w)) @ v.conj().T
    rotated = np.einsum("ab,nbc,dc->nad", u, traj.rho, u.conj())
    traj_rot = Trajectory(
        t=traj.t.copy(), rho=rotated, purity=traj.purity.copy(),
        system=traj.system, geometry=traj.geometry,
        table_digest=traj.table_digest, n_cycles=traj.n_cycles,
        samples_per_cycle=traj.samples_per_cycle)
    basis_dev = abs(geometric_phase(eigentrack(traj_rot), traj.t[-1]) - phi)

    print(f"gauge dev {gauge_dev:.2e}, basis dev {basis_dev:.2e}")
    assert gauge_dev < 1e-10
    assert basis_dev < 1e-10


def test_ac11_figure3_determinism(tmp_path):
    sections = []
    for workers in (1, 8):
        outdir = tmp_path / f"w{workers}"
        code = main(["--outdir", str(outdir), "--workers", str(workers),
                     "--no-plot", "figure", "3"])
        assert code == 0
        with open(outdir / "fig3_data.csv", encoding="utf-8") as fh:
            sections.append("".join(
                line for line in fh if not line.startswith("#")))
    assert sections[0] == sections[1], \
        "data sections must be byte-identical across worker counts"
    print(f"data section: {len(sections[0])} bytes, identical for "
          f"workers 1 and 8")


def test_ac12_longrun_presets_and_velocity_signal():
    data = fig7_dataset(workers=WORKERS)
    by_material = {}
    for row in data.rows:
        by_material.setdefault(row[0], []).append(row)
    assert set(by_material) == {"nSi", "Au"}
    for name, rows in by_material.items():
        assert len(rows) == 20
        assert all(math.isfinite(r[8]) for r in rows)

    signal = {name: np.array([r[8] for r in rows])
              for name, rows in by_material.items()}
    for name in ("nSi", "Au"):
        print(f"{name}: signal N=1 {signal[name][0]:+.3e}, "
              f"N=20 {signal[name][-1]:+.3e}")

    # the velocity effect accumulates over cycles for n-Si
    mags = np.abs(signal["nSi"])
    assert mags[-1] > mags[2], "n-Si velocity signal must grow with N"
    assert np.all(np.diff(mags[2:]) >= 0.0)

    # and is expected to raise the correction above its static value
    assert np.all(signal["nSi"][2:] >= 0.0), \
        "n-Si |delta_phi_u| - |delta_phi_0| must be non-negative"
    assert np.all(np.diff(signal["nSi"][2:]) >= 0.0)
