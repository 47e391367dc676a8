"""Output prediction over a horizon with frozen input, and its input Jacobian.

The predicted output is ``g(x, u) = h(xi(T))`` where ``xi' = f(xi, u)``,
``xi(0) = x``. Its Jacobian with respect to ``u`` comes from co-integrating the
sensitivity matrix ``S = d xi / d u``::

    S' = df_dx(xi, u) S + df_du(xi, u),   S(0) = 0,
    dg/du = dh_dx(xi(T)) S(T).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_vector
from .odeint import EULER, METHODS, IntegrationError, StepConfig, integrate, step_count
from .plants import PlantModel


class PredictionError(ArithmeticError):
    """Prediction integration failed; ``offset`` is the time into the horizon."""

    def __init__(self, offset: float, cause: Exception):
        self.offset = offset
        self.cause = cause
        super().__init__(f"prediction failed {offset!r} s into the horizon: {cause}")


@dataclass(frozen=True)
class PredictorConfig:
    T: float
    dt: float
    method: str = EULER
    use_fused: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and self.T >= self.dt):
            raise ValueError(f"need 0 < dt <= T, got dt={self.dt!r}, T={self.T!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def step(self) -> StepConfig:
        return StepConfig(self.dt, self.method)


@dataclass(frozen=True)
class Prediction:
    y_pred: np.ndarray
    jac: np.ndarray
    xi_end: np.ndarray


def _state_field(plant: PlantModel, u):
    return lambda xi, _t: plant.f(xi, u)


def predict(plant: PlantModel, x, u, cfg: PredictorConfig) -> np.ndarray:
    """Predicted output ``h(xi(T))`` with ``u`` held over the horizon."""
    x = check_vector(x, plant.n, "x")
    u = check_vector(u, plant.m, "u")
    try:
        xi = integrate(_state_field(plant, u), x, 0.0, cfg.T, cfg.step)
    except IntegrationError as exc:
        raise PredictionError(exc.t, exc) from exc
    return np.asarray(plant.h(xi), dtype=float)


def predict_with_jacobian(plant: PlantModel, x, u, cfg: PredictorConfig) -> Prediction:
    """Predicted output and ``dg/du`` from one fused state/sensitivity loop."""
    x = check_vector(x, plant.n, "x")
    u = check_vector(u, plant.m, "u")
    n, m = plant.n, plant.m

    if cfg.use_fused and cfg.method == EULER and plant.fused_euler is not None:
        n_steps, rem = step_count(cfg.T, cfg.dt)
        try:
            xi, S = plant.fused_euler(x, u, n_steps, cfg.dt, rem)
        except (ValueError, ArithmeticError) as exc:
            raise PredictionError(float("nan"), exc) from exc
    else:
        def augmented(z, _t):
            xi = z[:n]
            S = z[n:].reshape(n, m)
            dS = np.asarray(plant.df_dx(xi, u)) @ S + np.asarray(plant.df_du(xi, u))
            return np.concatenate([np.asarray(plant.f(xi, u), dtype=float), dS.ravel()])

        z0 = np.concatenate([x, np.zeros(n * m)])
        try:
            z = integrate(augmented, z0, 0.0, cfg.T, cfg.step)
        except IntegrationError as exc:
            raise PredictionError(exc.t, exc) from exc
        xi, S = z[:n], z[n:].reshape(n, m)

    jac = np.asarray(plant.dh_dx(xi), dtype=float) @ S
    y = np.asarray(plant.h(xi), dtype=float)
    if jac.shape != (m, m):
        raise ValueError(f"output Jacobian has shape {jac.shape}, expected {(m, m)}")
    if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(y))):
        raise PredictionError(cfg.T, FloatingPointError("non-finite prediction"))
    return Prediction(y_pred=y, jac=jac, xi_end=np.asarray(xi, dtype=float))


def fd_jacobian(plant: PlantModel, x, u, cfg: PredictorConfig, h_step=None) -> np.ndarray:
    """Central-difference ``dg/du``; independent check on :func:`predict_with_jacobian`.

    ``h_step`` is a scalar or per-component array of perturbations; by default
    ``1e-6 * max(1, |u_i|)``.
    """
    u = check_vector(u, plant.m, "u")
    if h_step is None:
        steps = 1e-6 * np.maximum(1.0, np.abs(u))
    else:
        steps = np.broadcast_to(np.asarray(h_step, dtype=float), u.shape)
    if np.any(steps <= 0):
        raise ValueError("finite-difference steps must be positive")
    cols = []
    for i in range(plant.m):
        du = np.zeros_like(u)
        du[i] = steps[i]
        cols.append((predict(plant, x, u + du, cfg) - predict(plant, x, u - du, cfg)) / (2.0 * steps[i]))
    return np.column_stack(cols)
