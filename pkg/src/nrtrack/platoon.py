"""Platoon of unicycle robots driven through their kinematic points.

Each robot's kinematic point ``p`` obeys ``p' = u``, so the predicted output
over the horizon is ``p + T u`` and the control flow reduces to
``u' = (alpha / T) (rho - p - T u)``. The leader tracks ``r(gamma (t + T))``;
each follower tracks the point of the path lying a chord ``d`` behind the
projection of its predecessor's predicted point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive, check_vector
from .odeint import EULER, METHODS, StepConfig, integrate
from .plants import kinematic_point_of, point_to_unicycle, unicycle_f
from .reference import (
    ChordNotFoundError,
    ReferenceCurve,
    advance_to_chord_distance,
    nearest_point,
)

LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlatoonConfig:
    n_robots: int = 4
    d: float = 0.25
    l: float = 0.08
    gamma: float = 0.0455
    alpha: float = 45.0
    T: float = 0.6
    dt: float = 0.033
    plant_method: str = EULER
    search_window: float = 0.2
    search_grid: float = 1e-3
    lateral_metrics: bool = False

    def __post_init__(self):
        if self.n_robots < 1:
            raise ValueError("need at least one robot")
        for name in ("d", "l", "gamma", "alpha", "T", "dt", "search_window", "search_grid"):
            check_positive(getattr(self, name), name)
        if not self.l < self.d / 2:
            raise ValueError(f"kinematic offset l={self.l} must be below d/2={self.d / 2}")
        if self.plant_method not in METHODS:
            raise ValueError(f"unknown plant_method {self.plant_method!r}")


@dataclass
class RobotState:
    unicycle: np.ndarray
    p: np.ndarray
    u: np.ndarray
    rho: np.ndarray
    tau_ref: float
    tau_proj: float


@dataclass(frozen=True)
class FollowerReference:
    rho: np.ndarray
    tau: float
    q: np.ndarray
    tau_q: float


@dataclass
class RobotTrace:
    """Per-robot record. ``rho`` is the reference ``rho_i(t + T)`` tracked at each row.

    ``lateral_error`` (distance from ``p`` to the path) is NaN unless
    ``PlatoonConfig.lateral_metrics`` is set.
    """

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    u: np.ndarray
    rho: np.ndarray
    control_error: np.ndarray
    lateral_error: np.ndarray


@dataclass
class PlatoonResult:
    robots: list
    t: np.ndarray
    spacing: np.ndarray  # (rows, n_robots - 1), spacing[:, j] = |p_{j+1} - p_j|
    fallback_events: int = 0
    order_violations: int = 0
    config: PlatoonConfig = field(default_factory=PlatoonConfig)


def leader_reference(curve: ReferenceCurve, t: float, T: float, gamma: float) -> np.ndarray:
    """``r(gamma * (t + T))``."""
    return curve.eval(gamma * (t + T))


def predicted_point(p, u, T: float) -> np.ndarray:
    """Kinematic point predicted ``T`` seconds ahead under constant ``u``."""
    return np.asarray(p, dtype=float) + T * np.asarray(u, dtype=float)


def trailing_start(curve: ReferenceCurve, q, tau_q: float, d: float, grid: float = 1e-3) -> float:
    """Latest grid time before ``tau_q`` at which the curve is farther than ``d`` from ``q``.

    Marching forward from here, the first chord crossing is the one trailing ``q``.
    """
    limit = curve.period if curve.periodic else tau_q - curve.t_begin
    k0, chunk = 0, 64
    while k0 * grid < limit:
        ks = np.arange(k0 + 1, k0 + chunk + 1)
        ts = tau_q - grid * ks
        if not curve.periodic:
            ts = ts[ts >= curve.t_begin]
            if ts.size == 0:
                break
        far = np.flatnonzero(np.linalg.norm(curve.eval(ts) - q, axis=1) > d)
        if far.size:
            return float(ts[far[0]])
        k0 += chunk
        chunk = min(2 * chunk, 4096)
    raise ChordNotFoundError(f"curve never leaves the {d} m disc around {q} behind t={tau_q}")


def follower_reference(curve: ReferenceCurve, p_tilde_prev, t_start: float | None, d: float,
                       *, tau_hint: float, window: float = 5.0,
                       grid: float = 1e-3) -> FollowerReference:
    """Reference point for a follower from its predecessor's predicted point only.

    ``q`` is the curve point nearest ``p_tilde_prev`` (searched around
    ``tau_hint``); the result is ``r(tau)`` for the smallest ``tau > t_start``
    with ``|r(tau) - q| = d``. With ``t_start=None`` the march starts from
    :func:`trailing_start`, which yields the point a chord ``d`` behind ``q``.
    """
    p_tilde_prev = check_vector(p_tilde_prev, 2, "p_tilde_prev")
    tau_q, q = nearest_point(curve, p_tilde_prev, tau_hint, window=window, grid=grid)
    if t_start is None:
        t_start = trailing_start(curve, q, tau_q, d, grid)
    tau = advance_to_chord_distance(curve, q, d, t_start, grid=grid)
    return FollowerReference(rho=curve.eval(tau), tau=tau, q=q, tau_q=tau_q)


def _behind(curve: ReferenceCurve, tau: float, tau_q: float) -> bool:
    gap = tau_q - tau
    if curve.periodic:
        gap = math.remainder(gap, curve.period)
    return gap > 0


def initial_poses(curve: ReferenceCurve, cfg: PlatoonConfig, tau0: float = 0.0):
    """Kinematic points on the curve, successive chords ``d`` apart, headings tangent."""
    taus = [tau0]
    for _ in range(1, cfg.n_robots):
        q = curve.eval(taus[-1])
        start = trailing_start(curve, q, taus[-1], cfg.d, cfg.search_grid)
        taus.append(advance_to_chord_distance(curve, q, cfg.d, start, grid=cfg.search_grid))
    states = []
    for tau in taus:
        p = curve.eval(tau)
        vel = curve.r_dot(tau)
        psi = math.atan2(vel[1], vel[0])
        z = p - cfg.l * np.array([math.cos(psi), math.sin(psi)])
        states.append(np.array([z[0], z[1], psi]))
    return states, taus


def run_platoon(curve: ReferenceCurve, cfg: PlatoonConfig, duration: float,
                initial_states=None, initial_taus=None) -> PlatoonResult:
    """Simulate the platoon for ``duration`` seconds with step ``cfg.dt``.

    Each step first updates controls in index order, so follower ``i``
    predicts its predecessor's point from the predecessor's position at ``t``
    and its freshly updated control; then all robots move.
    """
    check_positive(duration, "duration")
    if initial_states is None:
        initial_states, initial_taus = initial_poses(curve, cfg)
    elif initial_taus is None:
        raise ValueError("initial_taus are required with explicit initial_states")
    if len(initial_states) != cfg.n_robots:
        raise ValueError(f"expected {cfg.n_robots} initial states, got {len(initial_states)}")

    robots = []
    for x0, tau in zip(initial_states, initial_taus):
        x0 = check_vector(x0, 3, "initial unicycle state")
        robots.append(RobotState(unicycle=x0, p=kinematic_point_of(x0, cfg.l), u=np.zeros(2),
                                 rho=curve.eval(tau), tau_ref=tau, tau_proj=tau))

    n_steps = int(round(duration / cfg.dt))
    gain = cfg.alpha / cfg.T
    step_cfg = StepConfig(cfg.dt, cfg.plant_method)
    rows = [[] for _ in robots]
    spacing, times = [], []
    fallbacks = violations = 0

    for k in range(n_steps + 1):
        t = k * cfg.dt
        times.append(t)
        spacing.append([float(np.linalg.norm(robots[i].p - robots[i - 1].p))
                        for i in range(1, cfg.n_robots)])
        for i, rs in enumerate(robots):
            if i == 0:
                rs.tau_ref = cfg.gamma * (t + cfg.T)
                rs.rho = leader_reference(curve, t, cfg.T, cfg.gamma)
            else:
                prev = robots[i - 1]
                p_tilde = predicted_point(prev.p, prev.u, cfg.T)
                try:
                    ref = follower_reference(curve, p_tilde, None, cfg.d, tau_hint=prev.tau_proj,
                                             window=cfg.search_window, grid=cfg.search_grid)
                except ChordNotFoundError as exc:
                    fallbacks += 1
                    LOG.warning("robot %d keeps previous reference at t=%g: %s", i + 1, t, exc)
                else:
                    if not _behind(curve, ref.tau, ref.tau_q):
                        violations += 1
                        LOG.warning("robot %d reference not behind predecessor at t=%g", i + 1, t)
                    rs.rho, rs.tau_ref = ref.rho, ref.tau
                    prev.tau_proj = ref.tau_q

            p_tilde_own = predicted_point(rs.p, rs.u, cfg.T)
            lateral = math.nan
            if cfg.lateral_metrics:
                _, q_near = nearest_point(curve, rs.p, rs.tau_ref, window=cfg.search_window,
                                          grid=cfg.search_grid)
                lateral = float(np.linalg.norm(rs.p - q_near))
            rows[i].append((t, rs.unicycle.copy(), rs.p.copy(), rs.u.copy(), rs.rho.copy(),
                            float(np.linalg.norm(rs.rho - p_tilde_own)), lateral))
            if k < n_steps:
                rs.u = rs.u + cfg.dt * gain * (rs.rho - rs.p - cfg.T * rs.u)
        if k == n_steps:
            break

        for i, rs in enumerate(robots):
            v, omega = point_to_unicycle(rs.unicycle[2], cfg.l, rs.u)
            cmd = np.array([v, omega])
            rs.unicycle = integrate(lambda z, _t: unicycle_f(z, cmd), rs.unicycle, t, t + cfg.dt, step_cfg)
            if not np.all(np.isfinite(rs.unicycle)):
                raise FloatingPointError(f"robot {i + 1} state became non-finite at t={t}")
            rs.p = kinematic_point_of(rs.unicycle, cfg.l)

    traces = []
    for r in rows:
        cols = list(zip(*r))
        traces.append(RobotTrace(
            t=np.array(cols[0]), x=np.array(cols[1]), p=np.array(cols[2]), u=np.array(cols[3]),
            rho=np.array(cols[4]), control_error=np.array(cols[5]), lateral_error=np.array(cols[6])))
    return PlatoonResult(robots=traces, t=np.array(times), spacing=np.array(spacing),
                         fallback_events=fallbacks, order_violations=violations, config=cfg)
