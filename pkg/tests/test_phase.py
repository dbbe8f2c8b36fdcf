import dataclasses

import numpy as np
import pytest

from qfgp.errors import CoverageError, DegenerateSpectrumError, ValidationError
from qfgp.evolution import Trajectory, evolve
from qfgp.kernels import KernelConfig, tabulate
from qfgp.params import GeometryConfig, SystemParams, preset
from qfgp.phase import eigentrack, geometric_phase, phase_series

DELTA = 0.9
PERIOD = 2.0 * np.pi / DELTA


def _system(g=1e-3, theta0=np.deg2rad(44.9)):
    return SystemParams(delta_ratio=DELTA, theta0=theta0, coupling_g=g)


def _kcfg(u=0.007, g=1e-3):
    return KernelConfig(
        material=preset("reference-metal"),
        geometry=GeometryConfig(alpha=np.pi / 2, gamma_dip=0.0,
                                gap_a=3e-9, u=u),
        coupling_g=g)


def _unitary_track(theta0, spc=1024):
    geometry = GeometryConfig(alpha=np.pi / 2, gamma_dip=0.0,
                              gap_a=3e-9, u=0.0)
    traj = evolve(_system(g=0.0, theta0=theta0), geometry, None, 1, spc)
    return traj, eigentrack(traj)


def _mod_2pi_distance(a, b):
    return min(abs(a - b + 2 * np.pi * k) for k in (-2, -1, 0, 1, 2))


def test_unitary_closed_form():
    for theta_b_deg in (30.0, 90.0):
        traj, track = _unitary_track(np.deg2rad(theta_b_deg / 2))
        phi = geometric_phase(track, traj.t[-1])
        target = np.pi * (1.0 - np.cos(np.deg2rad(theta_b_deg)))
        assert _mod_2pi_distance(phi, target) < 1e-5


def test_gauge_invariance():
    traj, track = _unitary_track(0.5, spc=256)
    phi = geometric_phase(track, traj.t[-1])
    rng = np.random.default_rng(11)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi,
                                     size=(track.vecs.shape[0], 1, 2)))
    gauged = dataclasses.replace(track, vecs=track.vecs * phases,
                                 t=track.t.copy(), eps=track.eps.copy())
    assert abs(geometric_phase(gauged, traj.t[-1]) - phi) < 1e-12


def test_basis_invariance(short_table):
    # fixed unitary conjugation of a mixed-state trajectory
    traj = evolve(_system(), _kcfg().geometry, short_table, 2, 128)
    phi = geometric_phase(eigentrack(traj), traj.t[-1])

    rng = np.random.default_rng(5)
    h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    h = h + h.conj().T
    w, v = np.linalg.eigh(h)
    u = v @ np.diag(np.exp(1j * w)) @ v.conj().T
    rotated = np.einsum("ab,nbc,dc->nad", u, traj.rho, u.conj())
    traj_rot = Trajectory(
        t=traj.t.copy(), rho=rotated,
        purity=traj.purity.copy(), system=traj.system,
        geometry=traj.geometry, table_digest=traj.table_digest,
        n_cycles=traj.n_cycles, samples_per_cycle=traj.samples_per_cycle)
    phi_rot = geometric_phase(eigentrack(traj_rot), traj.t[-1])
    assert abs(phi_rot - phi) < 1e-10


def test_zero_velocity_decomposition():
    series = phase_series(_system(), _kcfg(u=0.0), 2)
    assert np.all(series.delta_phi_velocity == 0.0)
    np.testing.assert_array_equal(series.delta_phi,
                                  series.delta_phi_static)
    assert series.digests["coupled"] == series.digests["static"]


def test_zero_coupling_series():
    series = phase_series(_system(g=0.0), _kcfg(g=0.0), 2)
    assert np.max(np.abs(series.delta_phi)) < 1e-8
    assert np.all(series.delta_phi_velocity == 0.0)
    closed = series.metadata["phi_c_closed_form_bloch_angle"]
    assert len(closed) == 2


def test_sampling_convergence(short_table):
    # Pancharatnam chain error falls at least quadratically in the
    # sample spacing; successive halvings must shrink the change
    system = _system()
    phis = []
    for spc in (64, 128, 256):
        traj = evolve(system, _kcfg().geometry, short_table, 2, spc)
        phis.append(geometric_phase(eigentrack(traj), traj.t[-1]))
    err_coarse = abs(phis[1] - phis[0])
    err_fine = abs(phis[2] - phis[1])
    assert err_fine < 0.5 * err_coarse


def test_restart_matches_continuous_for_unitary():
    kcfg = _kcfg(u=0.0, g=0.0)
    a = phase_series(_system(g=0.0), kcfg, 3, restart_each_cycle=False)
    b = phase_series(_system(g=0.0), kcfg, 3, restart_each_cycle=True)
    np.testing.assert_allclose(a.phi_c, b.phi_c, atol=1e-8)


def test_coupling_mismatch_guard():
    with pytest.raises(ValidationError):
        phase_series(_system(g=1e-3), _kcfg(g=2e-3), 1)


def test_explicit_tables_route(short_table, moving_cfg):
    cfg0 = dataclasses.replace(
        moving_cfg,
        geometry=dataclasses.replace(moving_cfg.geometry, u=0.0))
    table0 = tabulate(cfg0, 3 * PERIOD, 0.02, delta_ratio=DELTA)
    via_tables = phase_series(_system(), moving_cfg, 2,
                              tables=(short_table, table0))
    direct = phase_series(_system(), moving_cfg, 2)
    np.testing.assert_array_equal(via_tables.phi_g, direct.phi_g)
    np.testing.assert_array_equal(via_tables.delta_phi_velocity,
                                  direct.delta_phi_velocity)


def test_at_cycle(short_table):
    series = phase_series(_system(), _kcfg(), 2)
    row = series.at_cycle(2)
    assert row["N"] == 2
    assert row["delta_phi"] == pytest.approx(
        row["phi_g"] - row["phi_c"], abs=1e-15)
    with pytest.raises(CoverageError):
        series.at_cycle(7)


def test_degenerate_spectrum_raises():
    n = 32
    t = np.linspace(0.0, 1.0, n)
    rho = np.tile(0.5 * np.eye(2, dtype=complex), (n, 1, 1))
    traj = Trajectory(
        t=t, rho=rho, purity=np.full(n, 0.5),
        system=_system(), geometry=_kcfg().geometry,
        table_digest="x", n_cycles=1, samples_per_cycle=n - 1)
    with pytest.raises(DegenerateSpectrumError):
        eigentrack(traj)
