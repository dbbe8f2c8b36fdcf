import dataclasses

import numpy as np
import pytest

import qfgp.sweeps as sweeps_mod
from qfgp.errors import (
    InsufficientPointsError,
    NoBracketError,
    QfgpError,
    SweepBudgetError,
    ValidationError,
    ZeroCorrectionError,
)
from qfgp.kernels import KernelConfig
from qfgp.params import GeometryConfig, SystemParams, preset
from qfgp.phase import PhaseSeries
from qfgp.sweeps import (
    SweepSpec,
    calibrate_coupling,
    fit_velocity_scaling,
    resolve_workers,
    run_sweep,
)

DELTA = 0.9


def _system(g=1e-3):
    return SystemParams(delta_ratio=DELTA, theta0=np.deg2rad(44.9),
                        coupling_g=g)


def _kcfg(u=0.007, g=1e-3, alpha=np.pi / 2, gamma_dip=0.0):
    return KernelConfig(
        material=preset("reference-metal"),
        geometry=GeometryConfig(alpha=alpha, gamma_dip=gamma_dip,
                                gap_a=3e-9, u=u),
        coupling_g=g)


def _spec(axes, n_cycles=2, **kw):
    return SweepSpec(system=_system(), kernel_config=_kcfg(),
                     n_cycles=n_cycles, axes=axes, **kw)


def _fake_series(u, dv, n_cycles=5, alpha=np.pi / 2, gamma_dip=0.0):
    """Synthetic phase series with a prescribed velocity correction."""
    cycles = np.arange(1, n_cycles + 1)
    zeros = np.zeros(n_cycles)
    return PhaseSeries(
        cycles=cycles, phi_g=zeros.copy(), phi_c=np.full(n_cycles, 1.0),
        delta_phi=np.full(n_cycles, dv), delta_phi_static=zeros.copy(),
        delta_phi_velocity=np.full(n_cycles, dv),
        system=_system(),
        config=_kcfg(u=u, alpha=alpha, gamma_dip=gamma_dip))


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv("QFGP_WORKERS", raising=False)
    assert resolve_workers(3) == 3
    assert resolve_workers() >= 1
    monkeypatch.setenv("QFGP_WORKERS", "5")
    assert resolve_workers() == 5
    assert resolve_workers(2) == 2  # explicit beats the environment
    monkeypatch.setenv("QFGP_WORKERS", "junk")
    with pytest.raises(ValidationError):
        resolve_workers()


def test_spec_validation():
    with pytest.raises(ValidationError):
        _spec({"unknown_axis": [1.0]})
    with pytest.raises(ValidationError):
        _spec({"u": []})
    with pytest.raises(SweepBudgetError):
        _spec({"u": list(np.linspace(0, 0.03, 40)),
               "alpha": list(np.linspace(0.1, 1.5, 20))})
    spec = _spec({"alpha": [0.1, 0.5], "u": [0.0, 0.007]})
    assert spec.axis_names == ("u", "alpha")  # canonical order
    assert spec.size == 4


def test_grid_order_and_point_inputs():
    spec = _spec({"u": [0.0, 0.01], "n_cycles": [2, 3]})
    pts = list(spec.grid())
    assert [ix for ix, _ in pts] == [0, 1, 2, 3]
    assert pts[0][1] == {"u": 0.0, "n_cycles": 2}
    assert pts[1][1] == {"u": 0.0, "n_cycles": 3}
    assert pts[2][1] == {"u": 0.01, "n_cycles": 2}

    system, kcfg, n_cycles = spec.point_inputs(pts[3][1])
    assert kcfg.geometry.u == 0.01
    assert n_cycles == 3
    assert system == spec.system


def test_run_sweep_small_grid():
    spec = _spec({"u": [0.0, 0.007]})
    result = run_sweep(spec, workers=1)
    assert len(result) == 2
    assert result.failures == []
    assert [p.index for p in result] == [0, 1]
    static = result.points[0].series
    moving = result.points[1].series
    assert np.all(static.delta_phi_velocity == 0.0)
    assert np.any(moving.delta_phi_velocity != 0.0)


def test_run_sweep_records_point_failures(monkeypatch):
    real = sweeps_mod.phase_series

    def flaky(system, kcfg, *args, **kwargs):
        if kcfg.geometry.u == 0.004:
            raise QfgpError("synthetic point failure")
        return real(system, kcfg, *args, **kwargs)

    monkeypatch.setattr(sweeps_mod, "phase_series", flaky)
    result = run_sweep(_spec({"u": [0.0, 0.004]}), workers=1)
    assert len(result.failures) == 1
    index, message = result.failures[0]
    assert index == 1
    assert "synthetic point failure" in message
    assert result.points[0].series is not None
    assert result.points[1].series is None


def test_fit_exact_square_law():
    us = (0.002, 0.004, 0.006, 0.008, 0.01)
    series = [_fake_series(u, 3.0 * u ** 2) for u in us]
    fit = fit_velocity_scaling(series)
    assert fit.exponent == pytest.approx(2.0, abs=1e-9)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.range == pytest.approx((0.002, 0.01), rel=1e-12)


def test_fit_linear_law_and_cycle_choice():
    us = (0.001, 0.002, 0.004, 0.008)
    series = [_fake_series(u, 0.5 * u) for u in us]
    fit = fit_velocity_scaling(series, N=3)
    assert fit.exponent == pytest.approx(1.0, abs=1e-9)


def test_fit_orientation_filter():
    us = (0.002, 0.004, 0.006, 0.008)
    wanted = [_fake_series(u, u ** 2) for u in us]
    decoys = [_fake_series(u, u ** 3, gamma_dip=np.pi / 2) for u in us]
    fit = fit_velocity_scaling(wanted + decoys,
                               orientation=(np.pi / 2, 0.0))
    assert fit.exponent == pytest.approx(2.0, abs=1e-9)


def test_fit_guards():
    us = (0.002, 0.004, 0.006)
    with pytest.raises(InsufficientPointsError):
        fit_velocity_scaling([_fake_series(u, u ** 2) for u in us])
    flat = [_fake_series(u, 0.0) for u in (0.002, 0.004, 0.006, 0.008)]
    with pytest.raises(ZeroCorrectionError):
        fit_velocity_scaling(flat)
    # the zero-velocity point is skipped, not an error
    series = [_fake_series(u, u ** 2)
              for u in (0.0, 0.002, 0.004, 0.006, 0.008)]
    assert fit_velocity_scaling(series).exponent == pytest.approx(2.0,
                                                                  abs=1e-9)


def _model_ratio(g):
    # smooth monotone saturation, crosses 0.6 at g = 0.015
    return g / (g + 0.01)


def test_calibrate_with_model_evaluator():
    result = calibrate_coupling((0.03, 20, 0.6), evaluator=_model_ratio,
                                bracket=(1e-4, 1.0), tol=1e-4)
    assert abs(_model_ratio(result.g) - 0.6) <= 1e-4
    assert result.g == pytest.approx(0.015, rel=5e-3)
    assert result.achieved_ratio == _model_ratio(result.g)
    assert result.iterations == len(result.history)
    gs = [g for g, _ in result.history]
    assert gs[0] == 1e-4 and gs[1] == 1.0  # bracket probed first


def test_calibrate_target_monotonicity():
    low = calibrate_coupling((0.03, 20, 0.3), evaluator=_model_ratio,
                             bracket=(1e-4, 1.0), tol=1e-5)
    high = calibrate_coupling((0.03, 20, 0.6), evaluator=_model_ratio,
                              bracket=(1e-4, 1.0), tol=1e-5)
    assert high.g > low.g


def test_calibrate_bracket_and_target_guards():
    with pytest.raises(NoBracketError):
        calibrate_coupling((0.03, 20, 0.99), evaluator=_model_ratio,
                           bracket=(1e-4, 0.5))
    with pytest.raises(NoBracketError):
        calibrate_coupling((0.03, 20, 0.5), evaluator=lambda g: 0.7 - g,
                           bracket=(1e-4, 0.5))
    with pytest.raises(ValidationError):
        calibrate_coupling((0.03, 20, 1.5), evaluator=_model_ratio)
    with pytest.raises(ValidationError):
        calibrate_coupling((0.03, 0, 0.5), evaluator=_model_ratio)
    with pytest.raises(ValidationError):
        calibrate_coupling((0.03, 20, 0.5), evaluator=_model_ratio,
                           bracket=(0.5, 0.1))


def test_calibrate_requires_config_without_evaluator():
    with pytest.raises(ValidationError):
        calibrate_coupling((0.03, 20, 0.6))


def test_static_variant_strips_velocity():
    cfg = _kcfg(u=0.02)
    static = sweeps_mod._static_variant(cfg)
    assert static.geometry.u == 0.0
    assert static.geometry.alpha == cfg.geometry.alpha
    assert static.digest() != cfg.digest()
