"""Newton-Raphson flow control law with speedup, and the closed-loop driver.

The controller integrates ``u' = alpha * J^{-1} (r(t + T) - g(x, u))`` with
forward Euler, where ``g`` and ``J = dg/du`` come from the predictor.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._validation import check_positive, check_vector, wrap_angle
from .odeint import EULER, StepConfig, integrate, step_count
from .plants import PlantModel
from .predictor import Prediction, PredictorConfig, predict_with_jacobian
from .reference import ReferenceCurve, nearest_point

LOG = logging.getLogger(__name__)

FAIL = "fail"
DAMPED = "damped"

_SINGULAR_RTOL = 1e-9


class SingularJacobianError(np.linalg.LinAlgError):
    """Predicted-output Jacobian is numerically singular."""

    def __init__(self, jac: np.ndarray, t: float | None = None):
        self.jac = np.array(jac)
        self.t = t
        super().__init__(f"singular output Jacobian at t={t!r}: det={np.linalg.det(jac)!r}")


class DivergenceError(ArithmeticError):
    """State or control norm left the admissible range."""

    def __init__(self, t: float, norm: float):
        self.t = t
        self.norm = norm
        super().__init__(f"divergence at t={t!r}: norm {norm!r}")


class SimulationAborted(RuntimeError):
    """Closed-loop run stopped early; ``trace`` holds the rows recorded so far."""

    def __init__(self, cause: Exception, trace: "SimTrace", t: float):
        self.cause = cause
        self.trace = trace
        self.t = t
        super().__init__(f"simulation aborted at t={t!r}: {cause}")


@dataclass(frozen=True)
class ControllerConfig:
    alpha: float
    predictor: PredictorConfig
    controller_dt: float
    u_init: Optional[np.ndarray] = None
    singular_policy: str = FAIL
    damping: Optional[float] = None

    def __post_init__(self):
        check_positive(self.alpha, "alpha")
        check_positive(self.controller_dt, "controller_dt")
        if self.singular_policy not in (FAIL, DAMPED):
            raise ValueError(f"singular_policy must be {FAIL!r} or {DAMPED!r}")
        if self.damping is not None and not self.damping > 0:
            raise ValueError("damping must be positive")


@dataclass(frozen=True)
class ControllerState:
    u: np.ndarray
    last_prediction: Optional[Prediction] = None
    singular_events: int = 0


def is_singular(jac: np.ndarray) -> bool:
    """``|det J|`` small relative to the scale ``||J||_F ** m``."""
    m = jac.shape[0]
    scale = np.linalg.norm(jac) ** m
    return not abs(np.linalg.det(jac)) >= _SINGULAR_RTOL * scale or scale == 0.0


def newton_direction(jac, err, policy: str = FAIL, damping: float | None = None,
                     t: float | None = None) -> tuple[np.ndarray, bool]:
    """Solve ``J d = err``; returns ``(d, used_damping)``.

    Under the damped policy a singular ``J`` is handled by the regularized
    normal equations ``(J^T J + lambda I) d = J^T err``.
    """
    jac = np.asarray(jac, dtype=float)
    err = np.asarray(err, dtype=float)
    if not is_singular(jac):
        return np.linalg.solve(jac, err), False
    if policy == FAIL:
        raise SingularJacobianError(jac, t)
    jtj = jac.T @ jac
    lam = damping if damping is not None else 1e-6 * np.trace(jtj) / jac.shape[0]
    if not lam > 0:
        lam = 1e-12
    return np.linalg.solve(jtj + lam * np.eye(jac.shape[0]), jac.T @ err), True


def control_step(cs: ControllerState, pred: Prediction, r_future, cfg: ControllerConfig,
                 t: float | None = None) -> ControllerState:
    """One forward-Euler step of the control flow."""
    err = np.asarray(r_future, dtype=float) - pred.y_pred
    direction, damped = newton_direction(pred.jac, err, cfg.singular_policy, cfg.damping, t)
    u = cs.u + cfg.controller_dt * cfg.alpha * direction
    if not np.all(np.isfinite(u)):
        raise DivergenceError(t if t is not None else math.nan, math.inf)
    return ControllerState(u=u, last_prediction=pred,
                           singular_events=cs.singular_events + int(damped))


def memoryless_step(u, g: Callable, dg_du: Callable, r, alpha: float, dt: float,
                    policy: str = FAIL, damping: float | None = None) -> np.ndarray:
    """One Euler step of ``u' = alpha * dg_du(u)^{-1} (r - g(u))``."""
    u = np.asarray(u, dtype=float)
    jac = np.atleast_2d(np.asarray(dg_du(u), dtype=float))
    err = np.atleast_1d(np.asarray(r, dtype=float) - np.asarray(g(u), dtype=float))
    direction, _ = newton_direction(jac, err, policy, damping)
    return u + dt * alpha * direction.reshape(u.shape)


def lyapunov_value(r, g_val) -> float:
    """``0.5 * ||r - g||^2``."""
    diff = np.asarray(r, dtype=float) - np.asarray(g_val, dtype=float)
    return 0.5 * float(diff @ diff) if diff.ndim else 0.5 * float(diff * diff)


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

@dataclass
class SimTrace:
    """Time-indexed closed-loop record; every field is an array with one row per sample."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    r_now: np.ndarray
    r_future: np.ndarray
    control_error: np.ndarray
    tracking_error: np.ndarray
    lateral_error: np.ndarray
    heading_error: np.ndarray
    jac_det: np.ndarray
    state_names: tuple = ()
    input_names: tuple = ()
    singular_events: int = 0

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_rows(cls, rows: list[dict], plant: PlantModel, singular_events: int = 0) -> "SimTrace":
        def col(key, width=None):
            if not rows:
                return np.empty((0,) if width is None else (0, width))
            return np.array([row[key] for row in rows], dtype=float)

        return cls(
            t=col("t"), x=col("x", plant.n), u=col("u", plant.m), y=col("y", plant.m),
            r_now=col("r_now", 2), r_future=col("r_future", 2),
            control_error=col("control_error"), tracking_error=col("tracking_error"),
            lateral_error=col("lateral_error"), heading_error=col("heading_error"),
            jac_det=col("jac_det"), state_names=plant.state_names,
            input_names=plant.input_names, singular_events=singular_events,
        )


def _output_heading(plant: PlantModel, x, u) -> float | None:
    if plant.heading is not None:
        return plant.heading(x)
    vel = np.asarray(plant.dh_dx(x), dtype=float) @ np.asarray(plant.f(x, u), dtype=float)
    if vel.shape[0] != 2 or np.hypot(vel[0], vel[1]) < 1e-12:
        return None
    return math.atan2(vel[1], vel[0])


def metrics_row(plant: PlantModel, x, u, pred: Prediction, curve: ReferenceCurve, t: float,
                T: float, tau_hint: float | None = None, window: float = 5.0) -> dict:
    """Error metrics at time ``t`` for state ``x`` and current control ``u``.

    Heading error compares the plant heading (or, lacking one, the direction
    of output motion) with the curve tangent at the nearest point; it is zero
    when no direction is defined.
    """
    y = np.asarray(plant.h(x), dtype=float)
    r_now = curve.eval(t)
    r_future = curve.eval(t + T)
    tau, q = nearest_point(curve, y, t if tau_hint is None else tau_hint, window=window)
    tangent = curve.r_dot(tau)
    heading = _output_heading(plant, x, u)
    if heading is None or not np.any(tangent):
        heading_err = 0.0
    else:
        heading_err = abs(wrap_angle(heading - math.atan2(tangent[1], tangent[0])))
    return {
        "t": t,
        "x": np.array(x, dtype=float),
        "u": np.array(u, dtype=float),
        "y": y,
        "r_now": r_now,
        "r_future": r_future,
        "control_error": float(np.linalg.norm(r_future - pred.y_pred)),
        "tracking_error": float(np.linalg.norm(r_now - y)),
        "lateral_error": float(np.linalg.norm(y - q)),
        "heading_error": heading_err,
        "jac_det": float(np.linalg.det(pred.jac)),
        "tau": tau,
    }


def run_closed_loop(plant: PlantModel, curve: ReferenceCurve, ctrl_cfg: ControllerConfig,
                    sim_dt: float, duration: float, x0, *, t0: float = 0.0,
                    plant_step: StepConfig | None = None, metric_window: float = 5.0,
                    blowup_norm: float | None = None) -> SimTrace:
    """Sampled-data closed loop: predict, update ``u``, then advance the plant.

    The plant is held at the updated ``u`` over each ``sim_dt`` interval and
    integrated with ``plant_step`` (default: one Euler step per interval).
    Errors abort the run with :class:`SimulationAborted` carrying the partial
    trace.
    """
    check_positive(sim_dt, "sim_dt")
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration!r}")
    x = check_vector(x0, plant.n, "x0")
    u0 = np.zeros(plant.m) if ctrl_cfg.u_init is None else check_vector(ctrl_cfg.u_init, plant.m, "u_init")
    cfg = dataclasses.replace(ctrl_cfg, controller_dt=sim_dt)
    plant_step = plant_step or StepConfig(sim_dt, EULER)
    T = cfg.predictor.T

    n_steps, rem = step_count(duration, sim_dt)
    times = [t0 + k * sim_dt for k in range(n_steps + 1)]
    if rem > 0:
        times.append(t0 + duration)

    cs = ControllerState(u=u0)
    rows: list[dict] = []
    tau_hint = None
    t = times[0]
    try:
        for k, t in enumerate(times):
            pred = predict_with_jacobian(plant, x, cs.u, cfg.predictor)
            row = metrics_row(plant, x, cs.u, pred, curve, t, T, tau_hint, metric_window)
            tau_hint = row.pop("tau")
            rows.append(row)
            if k == len(times) - 1:
                break
            h = times[k + 1] - t
            cs = control_step(cs, pred, row["r_future"], dataclasses.replace(cfg, controller_dt=h), t)
            u_hold = cs.u
            x = integrate(lambda z, _t: plant.f(z, u_hold), x, t, t + h,
                          StepConfig(min(plant_step.dt, h), plant_step.method))
            if blowup_norm is not None:
                norm = max(np.linalg.norm(x), np.linalg.norm(cs.u))
                if not norm <= blowup_norm:
                    raise DivergenceError(t + h, norm)
            elif not np.all(np.isfinite(x)):
                raise DivergenceError(t + h, math.inf)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise SimulationAborted(exc, SimTrace.from_rows(rows, plant, cs.singular_events), t) from exc
    return SimTrace.from_rows(rows, plant, cs.singular_events)


# --------------------------------------------------------------------------
# memoryless plants
# --------------------------------------------------------------------------

@dataclass
class MemorylessTrace:
    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    r: np.ndarray
    tracking_error: np.ndarray
    lyapunov: np.ndarray


def run_memoryless(g: Callable, dg_du: Callable, curve: ReferenceCurve, alpha: float,
                   dt: float, duration: float, u0, t0: float = 0.0,
                   policy: str = FAIL, damping: float | None = None) -> MemorylessTrace:
    """Track ``curve`` with the output ``g(u)`` of a memoryless plant."""
    check_positive(dt, "dt")
    u = np.asarray(u0, dtype=float)
    n_steps, rem = step_count(duration, dt)
    ts = t0 + dt * np.arange(n_steps + 1)
    if rem > 0:
        ts = np.append(ts, t0 + duration)
    refs = curve.eval(ts)
    us, ys = [], []
    for k, t in enumerate(ts):
        us.append(u)
        ys.append(np.asarray(g(u), dtype=float))
        if k < len(ts) - 1:
            u = memoryless_step(u, g, dg_du, refs[k], alpha, ts[k + 1] - t, policy, damping)
    us, ys = np.array(us), np.array(ys)
    err = refs - ys
    return MemorylessTrace(t=ts, u=us, y=ys, r=refs, tracking_error=np.linalg.norm(err, axis=1),
                           lyapunov=0.5 * np.sum(err * err, axis=1))


# --------------------------------------------------------------------------
# stability sweep
# --------------------------------------------------------------------------

BOUNDED = "bounded"
DIVERGED = "diverged"


@dataclass(frozen=True)
class CellResult:
    status: str
    peak_error: float = math.nan
    t_blowup: float = math.nan
    reason: str = ""


@dataclass
class SweepResult:
    alphas: tuple
    horizons: tuple
    cells: dict = field(default_factory=dict)

    def stable_horizons(self, alpha: float) -> set:
        return {T for T in self.horizons if self.cells[(alpha, T)].status == BOUNDED}

    def t_alpha(self, alpha: float) -> float:
        """Smallest grid horizon above which every grid horizon is stable (inf if none)."""
        boundary = math.inf
        for T in sorted(self.horizons, reverse=True):
            if self.cells[(alpha, T)].status != BOUNDED:
                break
            boundary = T
        return boundary

    def rows(self):
        for (alpha, T), cell in sorted(self.cells.items()):
            yield alpha, T, cell


def stability_sweep(plant: PlantModel, curve: ReferenceCurve, alphas: Sequence[float],
                    horizons: Sequence[float], sim_dt: float, duration: float, x0,
                    base: ControllerConfig, *, blowup_norm: float = 1e6,
                    **run_kwargs) -> SweepResult:
    """Classify each ``(alpha, T)`` cell as bounded or diverged.

    A cell diverges when any state/control norm exceeds ``blowup_norm``, a
    value becomes non-finite, or the plant leaves its admissible region.
    """
    if not alphas or not horizons:
        raise ValueError("stability sweep needs non-empty alpha and horizon grids")
    result = SweepResult(tuple(alphas), tuple(horizons))
    for alpha in alphas:
        for T in horizons:
            pred_cfg = dataclasses.replace(base.predictor, T=T)
            cfg = dataclasses.replace(base, alpha=alpha, predictor=pred_cfg)
            try:
                trace = run_closed_loop(plant, curve, cfg, sim_dt, duration, x0,
                                        blowup_norm=blowup_norm, **run_kwargs)
            except SimulationAborted as exc:
                LOG.info("alpha=%g T=%g diverged at t=%g: %s", alpha, T, exc.t, exc.cause)
                result.cells[(alpha, T)] = CellResult(DIVERGED, t_blowup=exc.t,
                                                      reason=type(exc.cause).__name__)
            else:
                result.cells[(alpha, T)] = CellResult(BOUNDED, float(np.max(trace.tracking_error)))
    return result
