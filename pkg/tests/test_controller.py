import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import bisect

from nrtrack.controller import (
    BOUNDED,
    DAMPED,
    DIVERGED,
    ControllerConfig,
    ControllerState,
    SimulationAborted,
    SingularJacobianError,
    control_step,
    is_singular,
    lyapunov_value,
    memoryless_step,
    metrics_row,
    newton_direction,
    run_closed_loop,
    run_memoryless,
    stability_sweep,
)
from nrtrack.plants import LANE_CHANGE_VEHICLE, bicycle_plant, integrator_plant, linear_plant, unicycle_plant
from nrtrack.predictor import Prediction, PredictorConfig, predict_with_jacobian
from nrtrack.reference import CircleCurve, FunctionCurve, LaneChangeCurve, LineCurve


def config(alpha=10.0, T=0.5, dt=0.01, **kw):
    return ControllerConfig(alpha=alpha, predictor=PredictorConfig(T, dt), controller_dt=dt, **kw)


def constant_curve(point):
    point = np.asarray(point, dtype=float)
    return FunctionCurve(lambda t: np.tile(point, (len(t), 1)), velocity=lambda t: np.zeros((len(t), 2)))


@given(x=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
       u=st.lists(st.floats(-10, 10), min_size=2, max_size=2),
       r=st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_integrator_update_is_closed_form(x, u, r):
    x, u, r = map(np.array, (x, u, r))
    cfg = config(alpha=45.0, T=0.6, dt=0.033)
    pred = predict_with_jacobian(integrator_plant(2), x, u, cfg.predictor)
    new = control_step(ControllerState(u), pred, r, cfg).u
    expected = u + 0.033 * (45.0 / 0.6) * (r - x - 0.6 * u)
    np.testing.assert_allclose(new, expected, rtol=1e-9, atol=1e-9)


def test_zero_error_leaves_u_unchanged():
    u = np.array([0.4, -0.2])
    pred = Prediction(y_pred=np.array([1.0, 2.0]), jac=np.eye(2), xi_end=np.zeros(2))
    assert np.array_equal(control_step(ControllerState(u), pred, [1.0, 2.0], config()).u, u)


def test_scalar_step_arithmetic():
    pred = Prediction(y_pred=np.array([0.0]), jac=np.array([[2.0]]), xi_end=np.zeros(1))
    cfg = ControllerConfig(alpha=3.0, predictor=PredictorConfig(0.5, 0.01), controller_dt=0.1)
    out = control_step(ControllerState(np.array([1.0])), pred, [4.0], cfg)
    assert out.u[0] - 1.0 == pytest.approx(0.6, abs=1e-15)


def test_singular_jacobian_fail_policy():
    with pytest.raises(SingularJacobianError):
        newton_direction(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


def test_damped_policy_solves_regularized_system():
    jac = np.array([[1.0, 0.0], [0.0, 0.0]])
    err = np.array([2.0, 1.0])
    d, damped = newton_direction(jac, err, DAMPED, damping=0.5)
    assert damped
    np.testing.assert_allclose(d, np.linalg.solve(jac.T @ jac + 0.5 * np.eye(2), jac.T @ err))


def test_singularity_is_scale_free():
    assert not is_singular(1e-6 * np.eye(2))
    assert is_singular(np.array([[1.0, 1.0], [1.0, 1.0 + 1e-12]]))


def test_memoryless_identity_converges_geometrically():
    ident = (lambda u: u, lambda u: np.eye(2))
    r = np.array([1.0, -2.0])
    u = np.zeros(2)
    err = np.linalg.norm(r - u)
    for _ in range(20):
        u = memoryless_step(u, *ident, r, alpha=5.0, dt=0.01)
        new_err = np.linalg.norm(r - u)
        assert new_err == pytest.approx((1 - 0.05) * err, rel=1e-12)
        err = new_err


def test_memoryless_monotone_cubic_root():
    g = lambda u: u ** 3 + u
    dg = lambda u: np.atleast_2d(3 * u ** 2 + 1)
    root = bisect(lambda v: v ** 3 + v - 2.0, 0.0, 2.0, xtol=1e-14)
    u = np.array([0.0])
    for _ in range(2000):
        u = memoryless_step(u, g, dg, [2.0], alpha=5.0, dt=0.01)
    assert u[0] == pytest.approx(root, abs=1e-10)
    assert root == pytest.approx(1.0, abs=1e-12)


def test_memoryless_step_linear_in_alpha():
    g = lambda u: np.sin(u) + 2 * u
    dg = lambda u: np.diag(np.cos(u) + 2)
    u0 = np.array([0.3, -0.1])
    d1 = memoryless_step(u0, g, dg, [1.0, 1.0], 2.0, 0.01) - u0
    d2 = memoryless_step(u0, g, dg, [1.0, 1.0], 4.0, 0.01) - u0
    np.testing.assert_allclose(d2, 2 * d1, rtol=1e-14)


def test_lyapunov_value():
    assert lyapunov_value([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert lyapunov_value([1.0, 0.0], [0.0, 0.0]) == 0.5


def test_lyapunov_decreases_outside_bound():
    # while |r - g| exceeds eta / alpha the Lyapunov value must decrease
    curve = FunctionCurve(lambda t: np.column_stack([np.sin(t), np.cos(t)]),
                          velocity=lambda t: np.column_stack([np.cos(t), -np.sin(t)]))
    alpha = 5.0
    tr = run_memoryless(lambda u: u, lambda u: np.eye(2), curve, alpha, 0.001, 3.0, [3.0, -3.0])
    outside = tr.tracking_error[:-1] > 1.0 / alpha + 0.01
    assert outside[:100].all()
    assert np.all(np.diff(tr.lyapunov)[outside] < 0)


def test_ramp_tracking_bound():
    curve = LineCurve(velocity=(1.0, 0.0))
    tr = run_closed_loop(integrator_plant(2), curve, config(alpha=10.0), 0.01, 10.0, [0.0, 0.0])
    assert np.max(tr.tracking_error[tr.t >= 5.0]) <= 0.1


def test_memoryless_constant_target_converges_by_20_over_alpha():
    alpha = 10.0
    tr = run_memoryless(lambda u: u, lambda u: np.eye(2), constant_curve([1.0, -0.5]), alpha, 0.01,
                        20.0 / alpha, [0.0, 0.0])
    assert tr.tracking_error[-1] < 1e-4


def test_constant_target_convergence():
    # with prediction the slowest closed-loop mode decays at roughly 1/T, not alpha
    alpha, T = 10.0, 0.5
    curve = constant_curve([1.0, -0.5])
    tr = run_closed_loop(integrator_plant(2), curve, config(alpha=alpha, T=T), 0.01, 20.0 * T, [0.0, 0.0])
    assert tr.tracking_error[-1] < 1e-4
    tail = tr.control_error[tr.t >= 0.5]
    assert np.all(np.diff(tail) <= 0)
    assert tr.control_error[-1] < 1e-3


def test_trace_shape_and_times():
    tr = run_closed_loop(integrator_plant(2), CircleCurve(), config(), 0.01, 2.0, [1.0, 0.0])
    assert len(tr) == 201
    assert np.all(np.diff(tr.t) > 0)
    assert tr.x.shape == (201, 2) and tr.u.shape == (201, 2)


def test_closed_loop_deterministic():
    runs = [run_closed_loop(bicycle_plant(LANE_CHANGE_VEHICLE), LaneChangeCurve(10.0),
                            config(alpha=30.0, T=0.5, dt=0.01), 0.01, 1.0, [0, 0, 10, 0, 0, 0])
            for _ in range(2)]
    for field in ("x", "u", "control_error", "lateral_error", "heading_error"):
        assert np.array_equal(getattr(runs[0], field), getattr(runs[1], field))


def test_errors_scale_with_output_scale():
    c = 2.0
    base = LineCurve(velocity=(0.7, 0.3))
    scaled = LineCurve(velocity=(c * 0.7, c * 0.3))
    plant = integrator_plant(2)
    scaled_plant = linear_plant(np.zeros((2, 2)), np.eye(2), c * np.eye(2))
    a = run_closed_loop(plant, base, config(), 0.01, 3.0, [0.5, -0.5])
    b = run_closed_loop(scaled_plant, scaled, config(), 0.01, 3.0, [0.5, -0.5])
    for field in ("control_error", "tracking_error", "lateral_error"):
        np.testing.assert_allclose(getattr(b, field), c * getattr(a, field), rtol=1e-12, atol=1e-15)


def test_metrics_on_curve_with_matched_heading():
    plant = bicycle_plant(LANE_CHANGE_VEHICLE)
    curve = LineCurve(velocity=(10.0, 0.0))
    x = np.array([3.0, 0.0, 10.0, 0.0, 0.0, 0.0])
    pred = predict_with_jacobian(plant, x, np.zeros(2), PredictorConfig(0.5, 0.01))
    row = metrics_row(plant, x, np.zeros(2), pred, curve, 0.3, 0.5)
    assert row["lateral_error"] < 1e-9
    assert row["heading_error"] == 0.0
    assert row["control_error"] < 1e-9


def test_metrics_heading_error_quarter_turn():
    plant = bicycle_plant(LANE_CHANGE_VEHICLE)
    x = np.array([0.0, 0.0, 10.0, 0.0, math.pi / 2, 0.0])
    pred = predict_with_jacobian(plant, x, np.zeros(2), PredictorConfig(0.5, 0.01))
    row = metrics_row(plant, x, np.zeros(2), pred, LineCurve(velocity=(10.0, 0.0)), 0.0, 0.5)
    assert row["heading_error"] == pytest.approx(math.pi / 2, abs=1e-12)


def test_metrics_heading_error_wraps():
    plant = bicycle_plant(LANE_CHANGE_VEHICLE)
    x = np.array([0.0, 0.0, 10.0, 0.0, 2 * math.pi + 0.1, 0.0])
    pred = predict_with_jacobian(plant, x, np.zeros(2), PredictorConfig(0.5, 0.01))
    row = metrics_row(plant, x, np.zeros(2), pred, LineCurve(velocity=(10.0, 0.0)), 0.0, 0.5)
    assert row["heading_error"] == pytest.approx(0.1, abs=1e-12)


def test_singular_start_aborts_under_fail_policy():
    # a standing unicycle cannot move its position sideways: dg/du is singular
    with pytest.raises(SimulationAborted) as info:
        run_closed_loop(unicycle_plant(), CircleCurve(radius=2.0), config(T=0.2), 0.01, 1.0, [0.0, 0.0, 0.0])
    assert isinstance(info.value.cause, SingularJacobianError)
    partial = info.value.trace
    assert len(partial) == 1
    assert np.all(np.isfinite(partial.x)) and np.all(np.isfinite(partial.u))


def test_singular_start_recovers_under_damped_policy():
    tr = run_closed_loop(unicycle_plant(), CircleCurve(radius=2.0), config(T=0.2, singular_policy=DAMPED),
                         0.01, 1.0, [0.0, 0.0, 0.0])
    assert tr.singular_events >= 1
    assert np.all(np.isfinite(tr.u))


def test_plant_failure_returns_partial_trace():
    # the target runs backwards so the vehicle brakes through the speed floor
    curve = LineCurve(velocity=(-5.0, 0.0))
    with pytest.raises(SimulationAborted) as info:
        run_closed_loop(bicycle_plant(LANE_CHANGE_VEHICLE), curve, config(alpha=30.0, T=0.5),
                        0.01, 10.0, [0, 0, 2.0, 0, 0, 0])
    assert 0 < len(info.value.trace) < 1001


def test_memoryless_eta_over_alpha():
    curve = FunctionCurve(lambda t: np.column_stack([np.sin(t), np.cos(t)]),
                          velocity=lambda t: np.column_stack([np.cos(t), -np.sin(t)]))
    alpha = 10.0
    tr = run_memoryless(lambda u: u, lambda u: np.eye(2), curve, alpha, 0.01, 100.0, [0.0, 0.0])
    assert np.max(tr.tracking_error[tr.t >= 50.0]) <= 1.05 / alpha


def test_integrator_sweep_always_bounded():
    # per axis the error e = r - x obeys e'' + a e' + (a/T) e = forcing
    alphas, horizons = [1.0, 5.0, 50.0], [0.05, 0.5, 2.0]
    for a in alphas:
        for T in horizons:
            M = np.array([[0.0, 1.0], [-a / T, -a]])
            assert np.all(np.linalg.eigvals(M).real < 0)
    res = stability_sweep(integrator_plant(2), CircleCurve(), alphas, horizons, 0.01, 1.5, [1.0, 0.0],
                          config(dt=0.01))
    assert all(cell.status == BOUNDED for _, _, cell in res.rows())


def test_sweep_flags_divergence():
    # a coarse controller step makes the Euler-discretized flow overshoot
    res = stability_sweep(integrator_plant(2), CircleCurve(), [500.0], [0.5], 0.01, 2.0, [1.0, 0.0],
                          config(dt=0.01))
    cell = res.cells[(500.0, 0.5)]
    assert cell.status == DIVERGED
    assert math.isfinite(cell.t_blowup)
    assert res.t_alpha(500.0) == math.inf


def test_sweep_rejects_empty_grid():
    with pytest.raises(ValueError):
        stability_sweep(integrator_plant(2), CircleCurve(), [], [0.5], 0.01, 1.0, [1.0, 0.0], config())
    with pytest.raises(ValueError):
        stability_sweep(integrator_plant(2), CircleCurve(), [1.0], [], 0.01, 1.0, [1.0, 0.0], config())


def test_config_validation():
    with pytest.raises(ValueError):
        config(alpha=0.0)
    with pytest.raises(ValueError):
        config(singular_policy="ignore")
    with pytest.raises(ValueError):
        config(damping=-1.0)
