"""Flow integration: initialization, exactness, IMEX consistency, monitors."""

import math

import numpy as np
import pytest

import crqflow as cq

PI2_4 = 4.0 * math.pi**2


def cfg4(**kw):
    base = dict(n=4, oversample=2.0, t_max=10.0)
    base.update(kw)
    return cq.FlowConfig(**base)


def volume_of(bg, lam_coeffs):
    model = bg.model
    return float(model.grid.weights @ (np.exp(4.0 * model.synthesize(lam_coeffs)) * bg.e4w))


# -- init ---------------------------------------------------------------------

def test_init_zero_unchanged(flat4, model4):
    state = cq.init_state(flat4, model4.zero_field(), cfg4())
    assert np.max(np.abs(state.lam.coeffs)) == 0.0
    assert volume_of(flat4, state.lam.coeffs) == pytest.approx(flat4.V0, rel=1e-14)


def test_init_constant_shifts_to_zero(flat4, model4):
    const = model4.field(0.7 * model4.one_coeffs)
    state = cq.init_state(flat4, const, cfg4())
    assert np.max(np.abs(state.lam.coeffs)) < 1e-12


def test_init_volume_constraint(flat4, model4):
    state = cq.init_state(flat4, model4.mode11_field(0.1), cfg4())
    vol = volume_of(flat4, state.lam.coeffs)
    assert abs(vol - flat4.V0) / flat4.V0 <= 1e-12
    # Only the kernel part moved: the perp component is still 0.1 uhat.
    assert np.allclose(state.lam_perp.coeffs, model4.mode11_field(0.1).coeffs,
                       atol=1e-12)


# -- r ------------------------------------------------------------------------

def test_r_zero_on_flat_stationary(flat4, model4):
    assert cq.compute_r(flat4, model4.zero_field()) == 0.0


def test_r_quadratic_scaling(flat4, model4):
    # Expansion of e^{4 lambda} gives r = 128 eps^2 / (4 pi^2) + O(eps^3).
    predicted = 128.0 / PI2_4
    for eps in (1e-2, 5e-3):
        r = cq.compute_r(flat4, model4.mode11_field(eps))
        assert r / eps**2 == pytest.approx(predicted, rel=0.02)


def test_r_vanishes_at_stationary_state(model4):
    bg = cq.make_background(model4.mode11_field(0.2), model4)
    traj = cq.run_flow(bg, model4.zero_field(), cfg4())
    assert abs(cq.compute_r(bg, traj.final_state.lam)) < 1e-10


# -- exact integrator ---------------------------------------------------------

def test_exact_single_mode_decay(flat4, model4):
    traj = cq.run_flow(flat4, model4.mode11_field(0.1), cfg4())
    assert traj.converged
    uhat = model4.mode11_field(1.0).coeffs
    worst = 0.0
    for t, lam in zip(traj.times, traj.snapshots):
        perp = flat4.decompose(cq.SpectralField(4, lam))[1].coeffs
        worst = max(worst, np.max(np.abs(perp - 0.1 * math.exp(-32.0 * t) * uhat)))
    assert worst <= 1e-9


def test_exact_stationary_run(flat4, model4):
    traj = cq.run_flow(flat4, model4.zero_field(), cfg4())
    assert traj.converged and traj.t_converged == 0.0
    assert len(traj.records) >= 3
    for lam in traj.snapshots:
        assert np.max(np.abs(lam)) < 1e-14


def test_exact_conformal_limit_against_linear_solve(model4):
    w = model4.mode11_field(0.3)
    bg = cq.make_background(w, model4)
    traj = cq.run_flow(bg, model4.zero_field(), cfg4())
    assert traj.converged
    lam_inf = traj.final_state.lam
    P = model4.ops.paneitz.matrix
    assert np.linalg.norm(P @ (lam_inf.coeffs + w.coeffs)) <= 1e-7
    assert traj.records[-1].q_l2 <= 1e-6
    # Independent stationary oracle: least-squares solve of 2 P x = -M Q0perp
    # (the minimum-norm solution is exactly the perp part of the limit).
    x, *_ = np.linalg.lstsq(2.0 * P, -(bg.mass @ bg.q0_perp.coeffs), rcond=None)
    x_perp = bg.decompose(cq.SpectralField(4, x))[1].coeffs
    lam_perp = bg.decompose(lam_inf)[1].coeffs
    assert np.max(np.abs(lam_perp - x_perp)) < 1e-7


def test_splitting_consistency(model4):
    bg = cq.make_background(model4.mode11_field(0.3), model4)
    traj = cq.run_flow(bg, model4.zero_field(), cfg4())
    ker0, _ = bg.decompose(cq.SpectralField(4, traj.snapshots[0]))
    for lam in traj.snapshots:
        field = cq.SpectralField(4, lam)
        ker, perp = bg.decompose(field)
        # P_0 lambda = P_0 lambda_perp.
        assert np.max(np.abs(bg.paneitz_coeffs(lam) - bg.paneitz_coeffs(perp.coeffs))) < 1e-10
        # Kernel drift is a multiple of the constant mode.
        drift = ker.coeffs - ker0.coeffs
        drift_nonconst = drift.copy()
        drift_nonconst[0] = 0.0
        assert np.max(np.abs(drift_nonconst)) < 1e-10


def test_volume_invariance_along_runs(model4, flat4):
    for bg, lam0 in [
        (flat4, model4.mode11_field(0.1)),
        (cq.make_background(model4.mode11_field(0.3), model4), model4.zero_field()),
    ]:
        traj = cq.run_flow(bg, lam0, cfg4())
        drift = np.max(np.abs(traj.column("volume") / bg.V0 - 1.0))
        assert drift <= 1e-6


def test_grad_norm_equals_monotone_quantity(model4):
    # The eqn for the monitored quantity collapses to int G^2 dmu_0; the two
    # record columns are computed by independent grid routes.
    bg = cq.make_background(model4.mode11_field(0.3), model4)
    traj = cq.run_flow(bg, model4.zero_field(), cfg4())
    g = traj.column("grad_norm_sq")
    m = traj.column("monotone_qty")
    mask = g > 1e-20
    assert np.max(np.abs(g[mask] - m[mask]) / g[mask]) < 1e-9


# -- IMEX ---------------------------------------------------------------------

def test_imex_stationary_fixed_point(flat4, model4):
    state = cq.init_state(flat4, model4.zero_field(), cfg4())
    stepped = cq.step_imex(flat4, state, 1e-2)
    assert np.max(np.abs(stepped.lam.coeffs)) < 1e-13

    bg = cq.make_background(model4.mode11_field(0.2), model4)
    traj = cq.run_flow(bg, model4.zero_field(), cfg4())
    stat = traj.final_state
    stepped = cq.step_imex(bg, stat, 1e-2)
    assert np.max(np.abs(stepped.lam.coeffs - stat.lam.coeffs)) < 1e-9


def test_imex_consistency_with_vector_field(flat4, model4):
    state = cq.init_state(flat4, model4.mode11_field(0.05), cfg4())
    lam = state.lam
    rhs = -flat4.gradient(lam) + cq.compute_r(flat4, lam) * model4.one_coeffs
    errs = []
    for dt in (1e-3, 5e-4):
        stepped = cq.step_imex(flat4, state, dt)
        fd = (stepped.lam.coeffs - lam.coeffs) / dt
        errs.append(np.max(np.abs(fd - rhs)))
    assert errs[0] < 0.05 * np.max(np.abs(rhs)) + 1e-12
    # First-order consistency error halves with dt.
    assert errs[1] < 0.7 * errs[0] + 1e-12


def test_imex_matches_exact_at_second_order(flat4, model4):
    cfg_exact = cfg4(t_max=0.2)
    cfg_imex = cfg4(integrator="imex_cn", dt=1e-3, t_max=0.2, monitor_stride=10)
    cv = cq.cross_validate(flat4, model4.mode11_field(0.1), cfg_exact, cfg_imex)
    assert 1.8 <= cv.order <= 2.2
    assert cv.error_half_dt < cv.error_dt
    # Halving dt reduces the discrepancy by about 4x.
    assert cv.error_dt / cv.error_half_dt == pytest.approx(4.0, rel=0.2)


def test_imex_volume_drift_scales_quadratically(flat4, model4):
    drifts = []
    for dt in (2e-3, 1e-3):
        cfg = cfg4(integrator="imex_cn", dt=dt, t_max=0.5, monitor_stride=5)
        traj = cq.run_flow(flat4, model4.mode11_field(0.1), cfg)
        drifts.append(np.max(np.abs(traj.column("volume") / flat4.V0 - 1.0)))
    assert drifts[1] < 0.35 * drifts[0]


# -- monitors -----------------------------------------------------------------

def test_monitors_on_mode11(flat4, model4):
    traj = cq.run_flow(flat4, model4.mode11_field(0.1), cfg4())
    report = cq.monitors(flat4, traj)
    assert report.all_passed
    fd = report.by_name("energy_dissipation")
    assert fd.applicable and fd.value <= 1e-4
    decay = report.by_name("perp_decay_rate")
    assert decay.applicable and decay.value == pytest.approx(-64.0, rel=1e-4)
    # Measured energy decay rate: E = 16 eps^2 e^{-64 t}.
    E = traj.column("E")
    usable = E > 1e-200
    slope = np.polyfit(traj.times[usable], np.log(E[usable]), 1)[0]
    assert slope == pytest.approx(-64.0, rel=0.01)
    assert E[0] == pytest.approx(0.16, rel=1e-10)


def test_monitors_on_stationary(flat4, model4):
    traj = cq.run_flow(flat4, model4.zero_field(), cfg4())
    report = cq.monitors(flat4, traj)
    assert report.all_passed
    assert np.allclose(np.diff(traj.column("E")), 0.0, atol=1e-15)


def test_monotone_quantity_decreases_on_random_background(model4):
    for seed in (0, 1, 2):
        bg = cq.make_background(cq.random_field(model4, seed, 2, 0.25), model4)
        lam0 = cq.random_field(model4, seed + 50, 2, 0.2)
        traj = cq.run_flow(bg, lam0, cfg4())
        report = cq.monitors(bg, traj)
        assert report.by_name("monotone_quantity").passed
        m = traj.column("monotone_qty")
        strict = m > 1e-18
        assert np.all(np.diff(m[strict]) < 0.0)


def test_monitors_require_three_records(flat4, model4):
    traj = cq.run_flow(flat4, model4.zero_field(), cfg4())
    clipped = cq.Trajectory(traj.records[:2], traj.snapshots[:2], True, 0.0,
                            "exact_perp", traj.config, traj.final_state)
    with pytest.raises(ValueError):
        cq.monitors(flat4, clipped)


def test_energy_fd_identity_everywhere(model4):
    bg = cq.make_background(model4.mode11_field(0.3), model4)
    traj = cq.run_flow(bg, model4.zero_field(), cfg4())
    t = traj.times
    E = traj.column("E")
    g = traj.column("grad_norm_sq")
    for k in range(1, len(t) - 1):
        hm, hp = t[k] - t[k - 1], t[k + 1] - t[k]
        fd = (hm**2 * E[k + 1] + (hp**2 - hm**2) * E[k] - hp**2 * E[k - 1]) / (
            hm * hp * (hm + hp)
        )
        assert abs(fd + g[k]) <= 1e-4 * (1.0 + abs(E[k]))


def test_flow_config_validation():
    with pytest.raises(ValueError):
        cq.FlowConfig(n=4, dt=0.0)
    with pytest.raises(ValueError):
        cq.FlowConfig(n=4, t_max=-1.0)
    with pytest.raises(ValueError):
        cq.FlowConfig(n=4, integrator="euler")
    with pytest.raises(ValueError):
        cq.FlowConfig(n=4, monitor_stride=0)


def test_trajectory_csv_roundtrip(tmp_path, flat4, model4):
    from crqflow.io import read_trajectory_csv, write_trajectory_csv

    traj = cq.run_flow(flat4, model4.mode11_field(0.05), cfg4(t_max=0.1))
    path = tmp_path / "trajectory.csv"
    write_trajectory_csv(path, traj)
    header = path.read_text().splitlines()[0]
    assert header == "t,E,grad_norm_sq,volume,r,q_l2,fs42,monotone_qty"
    data = read_trajectory_csv(path)
    assert np.array_equal(data["t"], traj.times)
    assert np.array_equal(data["E"], traj.column("E"))
    assert np.array_equal(data["monotone_qty"], traj.column("monotone_qty"))
