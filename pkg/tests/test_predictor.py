import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from nrtrack.odeint import RK4
from nrtrack.plants import (
    CLOSED_CURVE_VEHICLE,
    LANE_CHANGE_VEHICLE,
    bicycle_plant,
    integrator_plant,
    kinematic_point_plant,
    linear_plant,
)
from nrtrack.predictor import (
    PredictionError,
    PredictorConfig,
    fd_jacobian,
    predict,
    predict_with_jacobian,
)

BIKE = bicycle_plant(LANE_CHANGE_VEHICLE)
vec2 = st.lists(st.floats(-100, 100), min_size=2, max_size=2).map(np.array)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def expm_oracle(A, B, C, T):
    """``C (int_0^T e^{A s} ds) B`` from the exponential of an augmented matrix."""
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    return C @ scipy.linalg.expm(M * T)[:n, n:]


def test_integrator_prediction_is_exact():
    y = predict(integrator_plant(2), [1, 2], [3, -1], PredictorConfig(0.5, 0.01))
    np.testing.assert_allclose(y, [2.5, 1.5], atol=1e-12)


@given(x=vec2, u=vec2)
def test_integrator_jacobian_is_T(x, u):
    pred = predict_with_jacobian(integrator_plant(2), x, u, PredictorConfig(0.5, 0.01))
    np.testing.assert_allclose(pred.jac, 0.5 * np.eye(2), atol=1e-12)
    np.testing.assert_allclose(pred.y_pred, x + 0.5 * u, rtol=1e-12, atol=1e-9)


@given(x=vec2, u1=vec2, u2=vec2)
def test_integrator_prediction_linear_in_u(x, u1, u2):
    cfg = PredictorConfig(0.5, 0.1)
    plant = integrator_plant(2)
    combo = predict(plant, x, u1 + u2, cfg) - predict(plant, x, u1, cfg) - predict(plant, x, u2, cfg) \
        + predict(plant, x, np.zeros(2), cfg)
    np.testing.assert_allclose(combo, 0.0, atol=1e-9)


def test_integrator_fd_jacobian():
    jac = fd_jacobian(integrator_plant(2), [0.3, -0.2], [1.0, 2.0], PredictorConfig(0.5, 0.01))
    np.testing.assert_allclose(jac, 0.5 * np.eye(2), atol=1e-9)


def test_zero_state_coupling_gives_T_B():
    B = np.array([[1.0, 2.0], [-0.5, 3.0]])
    plant = linear_plant(np.zeros((2, 2)), B)
    pred = predict_with_jacobian(plant, [1, 1], [0.2, 0.1], PredictorConfig(0.4, 0.01))
    np.testing.assert_allclose(pred.jac, 0.4 * B, atol=1e-12)


def test_tiny_horizon_returns_current_output():
    x = np.array([0.0, 0.0, 10.0, 0.3, 0.1, 0.05])
    pred = predict_with_jacobian(BIKE, x, [0.5, 0.02], PredictorConfig(1e-9, 1e-9))
    np.testing.assert_allclose(pred.y_pred, x[:2], atol=1e-7)
    np.testing.assert_allclose(pred.jac, 0.0, atol=1e-8)


def test_bicycle_coasting():
    y = predict(BIKE, [0, 0, 10, 0, 0, 0], [0, 0], PredictorConfig(0.5, 0.001))
    np.testing.assert_allclose(y, [5.0, 0.0], atol=1e-12)


def test_bicycle_jacobian_matches_fd_at_reference_point():
    plant = bicycle_plant(CLOSED_CURVE_VEHICLE)
    cfg = PredictorConfig(0.5, 0.0025)
    x, u = [0, 0, 10, 0, 0, 0], [0, 0.01]
    assert rel_err(predict_with_jacobian(plant, x, u, cfg).jac, fd_jacobian(plant, x, u, cfg)) < 1e-3


def random_states(n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        x = np.array([rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(5, 30),
                      rng.uniform(-0.5, 0.5), rng.uniform(-math.pi, math.pi), rng.uniform(-0.3, 0.3)])
        u = np.array([rng.uniform(-2, 2), rng.uniform(-0.1, 0.1)])
        yield x, u


def test_bicycle_jacobian_matches_fd_randomized():
    cfg = PredictorConfig(0.5, 0.001)
    for x, u in random_states(100, seed=11):
        assert rel_err(predict_with_jacobian(BIKE, x, u, cfg).jac, fd_jacobian(BIKE, x, u, cfg)) < 1e-3


def test_compiled_path_matches_generic_loop():
    fused = PredictorConfig(0.5, 0.001)
    generic = PredictorConfig(0.5, 0.001, use_fused=False)
    for x, u in random_states(10, seed=5):
        a = predict_with_jacobian(BIKE, x, u, fused)
        b = predict_with_jacobian(BIKE, x, u, generic)
        np.testing.assert_allclose(a.y_pred, b.y_pred, rtol=1e-12, atol=1e-10)
        np.testing.assert_allclose(a.jac, b.jac, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(a.xi_end, b.xi_end, rtol=1e-12, atol=1e-10)


def test_partial_last_step_in_compiled_path():
    fused = PredictorConfig(0.5, 0.003)
    generic = PredictorConfig(0.5, 0.003, use_fused=False)
    x, u = next(random_states(1, seed=2))
    a = predict_with_jacobian(BIKE, x, u, fused)
    b = predict_with_jacobian(BIKE, x, u, generic)
    np.testing.assert_allclose(a.jac, b.jac, rtol=1e-9, atol=1e-12)


def test_fd_bicycle_variant_agrees():
    fd_plant = bicycle_plant(LANE_CHANGE_VEHICLE, jacobian="fd")
    cfg = PredictorConfig(0.5, 0.005)
    for x, u in random_states(5, seed=9):
        assert rel_err(predict_with_jacobian(fd_plant, x, u, cfg).jac,
                       predict_with_jacobian(BIKE, x, u, cfg).jac) < 1e-5


def test_rk4_predictor_matches_fd():
    cfg = PredictorConfig(0.5, 0.01, method=RK4)
    for x, u in random_states(5, seed=4):
        assert rel_err(predict_with_jacobian(BIKE, x, u, cfg).jac, fd_jacobian(BIKE, x, u, cfg)) < 1e-3


def test_kinematic_point_jacobian_matches_fd():
    plant = kinematic_point_plant(0.08)
    cfg = PredictorConfig(0.6, 0.01)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-math.pi, math.pi)])
        u = np.array([rng.uniform(-1, 1), rng.uniform(-2, 2)])
        assert rel_err(predict_with_jacobian(plant, x, u, cfg).jac, fd_jacobian(plant, x, u, cfg)) < 1e-3


def test_linear_plant_converges_to_expm_oracle_first_order():
    A = np.array([[0.0, 1.0], [-2.0, -0.5]])
    B = np.array([[0.0, 1.0], [1.0, 0.3]])
    C = np.array([[1.0, 0.0], [0.5, 1.0]])
    T = 0.5
    plant = linear_plant(A, B, C)
    oracle = expm_oracle(A, B, C, T)
    errors = []
    for dt in (1e-2, 1e-3, 1e-4):
        jac = predict_with_jacobian(plant, [0.1, 0.2], [1.0, -1.0], PredictorConfig(T, dt)).jac
        errors.append(np.linalg.norm(jac - oracle))
    assert errors[-1] < 1e-4
    for coarse, fine in zip(errors, errors[1:]):
        assert coarse / fine == pytest.approx(10.0, rel=0.3)


def test_low_speed_inside_horizon_raises():
    # hard braking drives v_l below the floor before the horizon ends
    with pytest.raises(PredictionError):
        predict_with_jacobian(BIKE, [0, 0, 1.0, 0, 0, 0], [-5.0, 0.0], PredictorConfig(0.5, 0.001))


def test_config_validation():
    with pytest.raises(ValueError):
        PredictorConfig(0.1, 0.2)
    with pytest.raises(ValueError):
        PredictorConfig(0.5, 0.0)
    with pytest.raises(ValueError):
        PredictorConfig(0.5, 0.01, method="leapfrog")


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        predict_with_jacobian(BIKE, [0, 0, 10], [0, 0], PredictorConfig(0.5, 0.01))
