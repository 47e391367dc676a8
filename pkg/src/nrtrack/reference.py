"""Time-parameterized planar reference curves and geometric queries on them."""

from __future__ import annotations

import logging
import math
from bisect import bisect_right
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from ._kernels import closed_spline_point, closed_spline_points
from ._validation import check_positive, check_vector

LOG = logging.getLogger(__name__)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class CurveDomainError(ValueError):
    """Time outside the domain of a non-periodic curve."""


class ChordNotFoundError(LookupError):
    """No point at the requested chord distance inside the search window."""


def _interp1(x: float, xs: list, ys: list) -> float:
    """Scalar ``np.interp`` on Python lists (clamped at the ends)."""
    if x <= xs[0]:
        return ys[0]
    if x >= xs[-1]:
        return ys[-1]
    i = bisect_right(xs, x) - 1
    w = (x - xs[i]) / (xs[i + 1] - xs[i])
    return ys[i] + w * (ys[i + 1] - ys[i])


class ReferenceCurve:
    """Base class for a target curve ``r(t)`` in the plane.

    Subclasses implement ``_position(t)`` for a 1-D array of times, returning an
    ``(k, 2)`` array, and may override ``_velocity``. Non-periodic curves are
    defined on ``[t_begin, t_end]``; periodic curves on the whole real line.
    """

    periodic = False
    period = math.inf
    t_begin = -math.inf
    t_end = math.inf
    is_substitute = False
    fd_step = 1e-6

    def _position(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _position1(self, t: float) -> tuple[float, float]:
        q = self._position(np.array([t]))[0]
        return q[0], q[1]

    def _velocity(self, t: np.ndarray) -> np.ndarray:
        h = self.fd_step
        return (self._position(t + h) - self._position(t - h)) / (2.0 * h)

    def _check_domain(self, t: np.ndarray):
        if self.periodic:
            return
        if np.any(t < self.t_begin) or np.any(t > self.t_end):
            raise CurveDomainError(
                f"time outside curve domain [{self.t_begin}, {self.t_end}]: "
                f"[{np.min(t)}, {np.max(t)}]")

    def eval(self, t):
        """Position at time ``t`` (scalar -> shape (2,), array -> shape (k, 2))."""
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_domain(ts)
        out = self._position(ts)
        return out[0] if scalar else out

    __call__ = eval

    def r_dot(self, t):
        """Velocity of the target point at time ``t``."""
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_domain(ts)
        out = self._velocity(ts)
        return out[0] if scalar else out

    def clip(self, lo: float, hi: float) -> tuple[float, float]:
        return max(lo, self.t_begin), min(hi, self.t_end)

    def eta_estimate(self, t0: float | None = None, t1: float | None = None, n: int = 20001) -> float:
        """Largest sampled target speed on ``[t0, t1]`` (one period by default)."""
        if t0 is None:
            t0 = 0.0 if self.periodic or not math.isfinite(self.t_begin) else self.t_begin
        if t1 is None:
            t1 = t0 + self.period if self.periodic else min(self.t_end, t0 + 100.0)
        ts = np.linspace(t0, t1, n)
        return float(np.max(np.linalg.norm(self.r_dot(ts), axis=1)))


class FunctionCurve(ReferenceCurve):
    """Curve from a user callable ``func(t_array) -> (k, 2)``."""

    def __init__(self, func: Callable, velocity: Optional[Callable] = None,
                 period: float | None = None, domain: tuple[float, float] = (-math.inf, math.inf)):
        self._func = func
        self._vel = velocity
        if period is not None:
            self.periodic = True
            self.period = check_positive(period, "period")
        else:
            self.t_begin, self.t_end = domain

    def _position(self, t):
        return np.asarray(self._func(t), dtype=float).reshape(len(t), 2)

    def _velocity(self, t):
        if self._vel is None:
            return super()._velocity(t)
        return np.asarray(self._vel(t), dtype=float).reshape(len(t), 2)


class LineCurve(ReferenceCurve):
    """``r(t) = origin + t * velocity``."""

    def __init__(self, origin=(0.0, 0.0), velocity=(1.0, 0.0)):
        self.origin = check_vector(origin, 2, "origin")
        self.velocity = check_vector(velocity, 2, "velocity")

    def _position(self, t):
        return self.origin + t[:, None] * self.velocity

    def _velocity(self, t):
        return np.tile(self.velocity, (len(t), 1))


class CircleCurve(ReferenceCurve):
    """Circle traversed counterclockwise at constant ``speed``, starting at angle ``phase``."""

    periodic = True

    def __init__(self, center=(0.0, 0.0), radius: float = 1.0, speed: float = 1.0, phase: float = 0.0):
        self.center = check_vector(center, 2, "center")
        self.radius = check_positive(radius, "radius")
        self.speed = check_positive(speed, "speed")
        self.phase = float(phase)
        self.omega = self.speed / self.radius
        self.period = 2.0 * math.pi / self.omega

    def _position(self, t):
        ang = self.phase + self.omega * np.mod(t, self.period)
        return self.center + self.radius * np.column_stack([np.cos(ang), np.sin(ang)])

    def _velocity(self, t):
        ang = self.phase + self.omega * np.mod(t, self.period)
        return self.speed * np.column_stack([-np.sin(ang), np.cos(ang)])


# --------------------------------------------------------------------------
# lane change
# --------------------------------------------------------------------------

def lane_change_z2(z1):
    """Lateral offset of the double lane-change path as a function of ``z1``."""
    z1 = np.asarray(z1, dtype=float)
    w1 = (2.4 / 25.0) * (z1 - 27.19) - 1.2
    w2 = (2.4 / 21.95) * (z1 - 56.46) - 1.2
    out = 2.025 * (1.0 + np.tanh(w1)) + 2.85 * (1.0 + np.tanh(w2))
    return float(out) if out.ndim == 0 else out


def lane_change_slope(z1):
    """``d z2 / d z1`` of :func:`lane_change_z2`."""
    z1 = np.asarray(z1, dtype=float)
    k1, k2 = 2.4 / 25.0, 2.4 / 21.95
    w1 = k1 * (z1 - 27.19) - 1.2
    w2 = k2 * (z1 - 56.46) - 1.2
    out = 2.025 * k1 / np.cosh(w1) ** 2 + 2.85 * k2 / np.cosh(w2) ** 2
    return float(out) if out.ndim == 0 else out


class LaneChangeCurve(ReferenceCurve):
    """Target moving at constant arc-length ``speed`` along the lane-change path.

    At ``t = 0`` the target is at ``z1 = 0``. The arc-length parameterization
    comes from a dense table over ``[z1_min, z1_max]`` with spacing
    ``resolution`` metres.
    """

    def __init__(self, speed: float, z1_min: float = -50.0, z1_max: float = 1000.0,
                 resolution: float = 0.005):
        self.speed = check_positive(speed, "speed")
        if not z1_min < 0.0 < z1_max:
            raise ValueError("need z1_min < 0 < z1_max")
        n = int(math.ceil((z1_max - z1_min) / resolution)) + 1
        z1 = np.linspace(z1_min, z1_max, n)
        ds = np.sqrt(1.0 + lane_change_slope(z1) ** 2)
        s = np.concatenate([[0.0], np.cumsum(0.5 * (ds[1:] + ds[:-1]) * np.diff(z1))])
        s -= np.interp(0.0, z1, s)
        self._z1 = z1
        self._s = s
        self._z1_list = z1.tolist()
        self._s_list = s.tolist()
        self.t_begin = s[0] / self.speed
        self.t_end = s[-1] / self.speed

    def z1_at(self, t):
        return np.interp(self.speed * np.asarray(t, dtype=float), self._s, self._z1)

    def _position(self, t):
        z1 = self.z1_at(t)
        return np.column_stack([z1, lane_change_z2(z1)])

    def _position1(self, t):
        z1 = _interp1(self.speed * t, self._s_list, self._z1_list)
        w1 = (2.4 / 25.0) * (z1 - 27.19) - 1.2
        w2 = (2.4 / 21.95) * (z1 - 56.46) - 1.2
        return z1, 2.025 * (1.0 + math.tanh(w1)) + 2.85 * (1.0 + math.tanh(w2))

    def _velocity(self, t):
        slope = lane_change_slope(self.z1_at(t))
        norm = np.sqrt(1.0 + slope ** 2)
        return self.speed * np.column_stack([1.0 / norm, slope / norm])


# --------------------------------------------------------------------------
# closed spline
# --------------------------------------------------------------------------

def rounded_rectangle_points(width: float, height: float, corner_radius: float,
                             n_points: int = 32, center=(0.0, 0.0)) -> np.ndarray:
    """Points evenly spaced in arc length around a rounded rectangle, counterclockwise.

    The first point is the midpoint of the bottom side.
    """
    check_positive(width, "width")
    check_positive(height, "height")
    rad = check_positive(corner_radius, "corner_radius")
    if 2 * rad > min(width, height):
        raise ValueError("corner radius too large for the rectangle extents")
    sx, sy = width - 2 * rad, height - 2 * rad
    quarter = 0.5 * math.pi * rad
    # bottom-right half, arc, right, arc, top, arc, left, arc, bottom-left half
    segs = [sx / 2, quarter, sy, quarter, sx, quarter, sy, quarter, sx / 2]
    total = sum(segs)
    cx, cy = center
    hx, hy = width / 2 - rad, height / 2 - rad
    corners = [(hx, -hy, -0.5 * math.pi), (hx, hy, 0.0), (-hx, hy, 0.5 * math.pi), (-hx, -hy, math.pi)]

    def point(s):
        for k, length in enumerate(segs):
            if s <= length or k == len(segs) - 1:
                break
            s -= length
        if k % 2 == 0:
            frac = s
            if k == 0:
                return (frac, -height / 2)
            if k == 2:
                return (width / 2, -hy + frac)
            if k == 4:
                return (hx - frac, height / 2)
            if k == 6:
                return (-width / 2, hy - frac)
            return (-hx + frac, -height / 2)
        ox, oy, a0 = corners[k // 2]
        ang = a0 + s / rad
        return (ox + rad * math.cos(ang), oy + rad * math.sin(ang))

    pts = np.array([point(total * i / n_points) for i in range(n_points)])
    return pts + np.array([cx, cy])


class ClosedSplineCurve(ReferenceCurve):
    """Closed periodic cubic spline through ``control_points``, traversed by time.

    The target's speed is ``mean_speed`` times a piecewise-linear profile given
    by ``speed_profile`` knots ``[(fraction_of_period, relative_speed), ...]``;
    the profile is rescaled so one period covers exactly one lap.
    """

    periodic = True
    is_substitute = True

    def __init__(self, control_points: Sequence, mean_speed: float,
                 speed_profile: Sequence | None = None, clockwise: bool = False,
                 table_size: int = 10001):
        pts = np.asarray(control_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise ValueError("need at least 4 control points of shape (k, 2)")
        if clockwise:
            pts = pts[::-1]
        self.mean_speed = check_positive(mean_speed, "mean_speed")
        closed = np.vstack([pts, pts[:1]])
        knots = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(closed, axis=0), axis=1))])
        spline = CubicSpline(knots, closed, bc_type="periodic")
        self._breaks = spline.x
        self._coef = spline.c  # (4, n_segments, 2), highest power first

        u = np.linspace(0.0, knots[-1], table_size)
        xy = self._spline(u)
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
        self._u_table = u
        self._s_table = s
        self.length = float(s[-1])
        self.period = self.length / self.mean_speed

        if speed_profile is None:
            speed_profile = [(0.0, 1.0), (1.0, 1.0)]
        prof = np.asarray(speed_profile, dtype=float)
        if prof.ndim != 2 or prof.shape[1] != 2 or prof[0, 0] != 0.0 or prof[-1, 0] != 1.0:
            raise ValueError("speed_profile must be knots (fraction, speed) spanning [0, 1]")
        if np.any(np.diff(prof[:, 0]) <= 0) or np.any(prof[:, 1] <= 0):
            raise ValueError("speed_profile fractions must increase and speeds be positive")
        frac = np.linspace(0.0, 1.0, table_size)
        rel = np.interp(frac, prof[:, 0], prof[:, 1])
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (rel[1:] + rel[:-1]) * np.diff(frac))])
        self._rel_mean = float(cum[-1])
        self._frac = frac
        self._cum_s = cum / cum[-1] * self.length
        self._profile = prof
        self._tables = (self.period, frac, self._cum_s, s, u, self._breaks,
                        np.ascontiguousarray(self._coef))

    def speed_at(self, t):
        frac = np.mod(np.asarray(t, dtype=float), self.period) / self.period
        return self.mean_speed * np.interp(frac, self._profile[:, 0], self._profile[:, 1]) / self._rel_mean

    def arc_at(self, t):
        """Arc length (mod one lap) reached at time ``t``."""
        frac = np.mod(np.asarray(t, dtype=float), self.period) / self.period
        return np.interp(frac, self._frac, self._cum_s)

    def _segments(self, u):
        i = np.clip(np.searchsorted(self._breaks, u, side="right") - 1, 0, len(self._breaks) - 2)
        return self._coef[:, i, :], (u - self._breaks[i])[:, None]

    def _spline(self, u):
        c, du = self._segments(u)
        return ((c[0] * du + c[1]) * du + c[2]) * du + c[3]

    def _spline_tangent(self, u):
        c, du = self._segments(u)
        return (3.0 * c[0] * du + 2.0 * c[1]) * du + c[2]

    def _param(self, t):
        return np.interp(self.arc_at(t), self._s_table, self._u_table)

    def _position(self, t):
        return closed_spline_points(np.ascontiguousarray(t, dtype=float), *self._tables)

    def _position1(self, t):
        return closed_spline_point(float(t), *self._tables)

    def _velocity(self, t):
        tan = self._spline_tangent(self._param(t))
        tan /= np.linalg.norm(tan, axis=1)[:, None]
        return self.speed_at(t)[:, None] * tan


# --------------------------------------------------------------------------
# geometric queries
# --------------------------------------------------------------------------

def _dist(curve: ReferenceCurve, t, p) -> np.ndarray:
    return np.linalg.norm(curve.eval(np.atleast_1d(t)) - p, axis=1)


def _dist1(curve: ReferenceCurve, t: float, p) -> float:
    # t already known to be inside the domain
    qx, qy = curve._position1(t)
    return math.hypot(qx - p[0], qy - p[1])


def nearest_point(curve: ReferenceCurve, p, t_hint: float, window: float = 5.0,
                  grid: float = 1e-3, tol: float = 1e-6) -> tuple[float, np.ndarray]:
    """Time ``tau`` in ``[t_hint - window, t_hint + window]`` minimizing ``|r(tau) - p|``.

    Coarse sampling on ``grid`` locates the best sample (smallest ``tau`` on
    ties), then golden-section search refines it to ``tol``.
    """
    p = check_vector(p, 2, "p")
    lo, hi = curve.clip(t_hint - window, t_hint + window)
    if lo > hi:
        raise CurveDomainError(f"search window around {t_hint} lies outside the curve domain")
    n = max(2, int(math.ceil((hi - lo) / grid)) + 1)
    ts = np.linspace(lo, hi, n)
    d = _dist(curve, ts, p)
    k = int(np.argmin(d))
    at_lo = k == 0 and lo > curve.t_begin and d[0] < d[1]
    at_hi = k == n - 1 and hi < curve.t_end and d[-1] < d[-2]
    if at_lo or at_hi:
        LOG.warning("nearest point at edge of search window around t=%g", t_hint)

    a, b = ts[max(k - 1, 0)], ts[min(k + 1, n - 1)]
    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    fc, fe = _dist1(curve, c, p), _dist1(curve, e, p)
    while b - a > tol:
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _dist1(curve, c, p)
        else:
            a, c, fc = c, e, fe
            e = a + _GOLDEN * (b - a)
            fe = _dist1(curve, e, p)
    candidates = [(d[k], ts[k]), (fc, c), (fe, e)]
    best_d, tau = min(candidates, key=lambda item: (item[0], item[1]))
    tau = float(tau)
    return tau, curve.eval(tau)


def advance_to_chord_distance(curve: ReferenceCurve, q, d: float, t_start: float,
                              window: float | None = None, grid: float = 1e-3,
                              tol: float = 1e-6) -> float:
    """Smallest ``tau > t_start`` with ``|r(tau) - q| = d``.

    Marches forward on ``grid`` until ``|r(tau) - q| - d`` changes sign, then
    refines the bracket to ``tol`` seconds. The search covers one period for
    periodic curves, otherwise ``window`` seconds (default: up to ``t_end``).
    """
    q = check_vector(q, 2, "q")
    check_positive(d, "d")
    if window is None:
        window = curve.period if curve.periodic else curve.t_end - t_start
    stop = t_start + window
    if not curve.periodic:
        stop = min(stop, curve.t_end)

    def gap(t):
        return _dist(curve, t, q) - d

    prev_t = t_start
    prev_g = gap(t_start)[0]
    if prev_g == 0.0:
        # starting exactly on the chord circle; the side we leave towards decides the sign
        prev_g = gap(t_start + 0.5 * grid)[0] or 1.0
    chunk = 64
    while prev_t < stop:
        ts = prev_t + grid * np.arange(1, chunk + 1)
        ts = ts[ts <= stop + 0.5 * grid]
        if ts.size == 0:
            break
        ts[-1] = min(ts[-1], stop)
        g = gap(ts)
        hits = np.flatnonzero(np.sign(g) != np.sign(prev_g))
        if hits.size:
            k = int(hits[0])
            a = prev_t if k == 0 else ts[k - 1]
            b = ts[k]
            if g[k] == 0.0:
                return float(b)
            return float(brentq(lambda t: _dist1(curve, t, q) - d, a, b, xtol=min(tol, 1e-12)))
        prev_t, prev_g = float(ts[-1]), float(g[-1])
        chunk = min(2 * chunk, 4096)
    raise ChordNotFoundError(f"no point at chord distance {d} from {q} after t={t_start}")
