"""Constant estimates, decay rates, cross-validation, aliasing control."""

import math

import numpy as np
import pytest

import crqflow as cq


def test_upsilon_flat_is_sixteen(flat4):
    est = cq.estimate_upsilon(flat4, [2, 3, 4])
    assert est.name == "upsilon"
    assert est.stable_flag
    for _, value in est.trend:
        assert value == pytest.approx(16.0, abs=1e-8)
    assert est.value == pytest.approx(16.0, abs=1e-8)


def test_upsilon_perturbation_shrinks_with_w(model4):
    gaps = []
    for amp in (1e-2, 1e-3):
        bg = cq.make_background(model4.mode11_field(amp), model4)
        gaps.append(abs(bg.upsilon() - 16.0))
    assert gaps[0] < 1.0
    assert gaps[1] < 0.5 * gaps[0]


def test_upsilon_positive_on_random_background(model4):
    bg = cq.make_background(cq.random_field(model4, 8, 2, 0.4), model4)
    est = cq.estimate_upsilon(bg, [4])
    assert est.value > 0.0


def test_subelliptic_mode_example():
    est = cq.subelliptic_constant(0, [2])
    # k = 0, mode (1,1): 5^4 / (16^2 + 1) = 625/257.
    assert est.value == pytest.approx(625.0 / 257.0, rel=1e-14)
    est2 = cq.subelliptic_constant(2, [2])
    assert est2.value == pytest.approx(15625.0 / 6401.0, rel=1e-14)


def test_subelliptic_trend_bounded():
    est = cq.subelliptic_constant(0, [4, 6, 8, 10])
    values = [v for _, v in est.trend]
    peak = values.index(max(values))
    assert all(values[i] >= values[i + 1] for i in range(peak, len(values) - 1))
    assert est.stable_flag


def test_subelliptic_rejects_odd_order():
    with pytest.raises(ValueError):
        cq.subelliptic_constant(1, [4])
    with pytest.raises(ValueError):
        cq.subelliptic_constant(-2, [4])


def test_decay_rate_single_mode(flat4, model4):
    traj = cq.run_flow(flat4, model4.mode11_field(0.1),
                       cq.FlowConfig(n=4, oversample=2.0, t_max=10.0))
    res = cq.decay_rate_check(flat4, traj, 1)
    assert res.passed_sharp and res.passed_paper
    assert res.slope == pytest.approx(-64.0, rel=1e-4)
    res0 = cq.decay_rate_check(flat4, traj, 0)
    assert res0.slope == pytest.approx(-64.0, rel=1e-4)


def test_decay_rate_mixed_data_dominated_by_slowest(flat4, model4):
    lam0 = model4.field(
        model4.mode11_field(0.05).coeffs + model4.unit_field(2, 2, 2, 0.05).coeffs
    )
    traj = cq.run_flow(flat4, lam0, cq.FlowConfig(n=4, oversample=2.0, t_max=10.0))
    res = cq.decay_rate_check(flat4, traj, 1)
    assert res.passed_sharp
    assert res.slope <= -64.0 + 1e-6


def test_decay_rate_kernel_initial_data(flat4, model4):
    coeffs = np.zeros(model4.size)
    coeffs[model4.kernel_idx[2]] = 0.2
    traj = cq.run_flow(flat4, model4.field(coeffs),
                       cq.FlowConfig(n=4, oversample=2.0, t_max=1.0))
    # The decay quantity is identically zero for pluriharmonic data.
    for lam in traj.snapshots:
        _, perp = flat4.decompose(cq.SpectralField(4, lam))
        x = flat4.paneitz_coeffs(perp.coeffs)
        assert flat4.weighted_dot(x, x) < 1e-24
    with pytest.raises(ValueError):
        cq.decay_rate_check(flat4, traj, 1)


def test_decay_rate_requires_flat_q0(model4):
    bg = cq.make_background(model4.mode11_field(0.3), model4)
    traj = cq.run_flow(bg, model4.zero_field(),
                       cq.FlowConfig(n=4, oversample=2.0, t_max=0.2))
    with pytest.raises(ValueError):
        cq.decay_rate_check(bg, traj, 1)


def test_cross_validate_stationary(flat4, model4):
    cfg_exact = cq.FlowConfig(n=4, oversample=2.0, t_max=0.05)
    cfg_imex = cq.FlowConfig(n=4, oversample=2.0, integrator="imex_cn",
                             dt=1e-2, t_max=0.05)
    cv = cq.cross_validate(flat4, model4.zero_field(), cfg_exact, cfg_imex)
    assert cv.error_dt <= 1e-12
    assert cv.error_half_dt <= 1e-12


def test_cross_validate_order_two(flat4, model4):
    cfg_exact = cq.FlowConfig(n=4, oversample=2.0, t_max=0.2)
    cfg_imex = cq.FlowConfig(n=4, oversample=2.0, integrator="imex_cn",
                             dt=1e-3, t_max=0.2, monitor_stride=10)
    cv = cq.cross_validate(flat4, model4.mode11_field(0.1), cfg_exact, cfg_imex)
    assert cv.order == pytest.approx(2.0, abs=0.2)


def test_cross_validate_on_forced_background(model4):
    bg = cq.make_background(model4.mode11_field(0.2), model4)
    cfg_exact = cq.FlowConfig(n=4, oversample=2.0, t_max=0.1)
    cfg_imex = cq.FlowConfig(n=4, oversample=2.0, integrator="imex_cn",
                             dt=1e-3, t_max=0.1, monitor_stride=10)
    cv = cq.cross_validate(bg, model4.zero_field(), cfg_exact, cfg_imex)
    assert cv.order == pytest.approx(2.0, abs=0.2)


def test_aliasing_residual_small(model6):
    bg = cq.make_background(model6.mode11_field(0.2), model6)
    lam = model6.unit_field(2, 1, 1, 0.1)
    assert cq.aliasing_residual(bg, lam) <= 1e-8


def test_constant_estimates_deterministic(model4):
    bg = cq.make_background(cq.random_field(model4, 4, 2, 0.3), model4)
    a = cq.estimate_upsilon(bg, [3, 4])
    b = cq.estimate_upsilon(bg, [3, 4])
    assert a == b
