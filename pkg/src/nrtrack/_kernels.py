"""Compiled inner loops for the hot prediction path.

These mirror the generic numpy code in :mod:`nrtrack.predictor` step for step;
tests check the two agree to rounding error.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _bicycle_rhs(x, u, prm, dx, A, B):
    m, Iz, lf, lr, Caf, Car = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5]
    vl, vn, psi, r = x[2], x[3], x[4], x[5]
    a, delta = u[0], u[1]
    bf = (vn + lf * r) / vl
    br = (vn - lr * r) / vl
    fcf = Caf * (delta - math.atan(bf))
    fcr = -Car * math.atan(br)
    c = math.cos(psi)
    s = math.sin(psi)
    cd = math.cos(delta)
    sd = math.sin(delta)

    dx[0] = vl * c - vn * s
    dx[1] = vl * s + vn * c
    dx[2] = r * vn + a
    dx[3] = -r * vl + 2.0 * (fcf * cd + fcr) / m
    dx[4] = r
    dx[5] = 2.0 * (lf * fcf * cd - lr * fcr) / Iz

    kf = -Caf / (1.0 + bf * bf)
    kr = -Car / (1.0 + br * br)
    f_vl, f_vn, f_r = kf * (-bf / vl), kf / vl, kf * lf / vl
    r_vl, r_vn, r_r = kr * (-br / vl), kr / vl, kr * (-lr) / vl

    for i in range(6):
        for j in range(6):
            A[i, j] = 0.0
        B[i, 0] = 0.0
        B[i, 1] = 0.0
    A[0, 2] = c
    A[0, 3] = -s
    A[0, 4] = -vl * s - vn * c
    A[1, 2] = s
    A[1, 3] = c
    A[1, 4] = vl * c - vn * s
    A[2, 3] = r
    A[2, 5] = vn
    A[3, 2] = 2.0 * (cd * f_vl + r_vl) / m - r
    A[3, 3] = 2.0 * (cd * f_vn + r_vn) / m
    A[3, 5] = 2.0 * (cd * f_r + r_r) / m - vl
    A[4, 5] = 1.0
    A[5, 2] = 2.0 * (lf * cd * f_vl - lr * r_vl) / Iz
    A[5, 3] = 2.0 * (lf * cd * f_vn - lr * r_vn) / Iz
    A[5, 5] = 2.0 * (lf * cd * f_r - lr * r_r) / Iz

    d_steer = Caf * cd - fcf * sd
    B[2, 0] = 1.0
    B[3, 1] = 2.0 * d_steer / m
    B[5, 1] = 2.0 * lf * d_steer / Iz


@njit(cache=True)
def _euler_pair(xi, S, u, prm, h, dx, A, B, AS):
    _bicycle_rhs(xi, u, prm, dx, A, B)
    for i in range(6):
        for k in range(2):
            acc = B[i, k]
            for j in range(6):
                acc += A[i, j] * S[j, k]
            AS[i, k] = acc
    for i in range(6):
        xi[i] += h * dx[i]
        S[i, 0] += h * AS[i, 0]
        S[i, 1] += h * AS[i, 1]


@njit(cache=True)
def bicycle_fused_euler(x, u, prm, n_steps, dt, rem):
    """Forward-Euler co-integration of the bicycle state and its input sensitivity.

    Returns ``(xi_end, S_end, status)`` where status 0 is success, 1 a
    longitudinal velocity below ``prm[6]`` and 2 a non-finite value.
    """
    xi = x.copy()
    S = np.zeros((6, 2))
    dx = np.empty(6)
    A = np.empty((6, 6))
    B = np.empty((6, 2))
    AS = np.empty((6, 2))
    v_min = prm[6]
    total = n_steps + (1 if rem > 0.0 else 0)
    for k in range(total):
        if not xi[2] >= v_min:
            return xi, S, 1
        h = dt if k < n_steps else rem
        _euler_pair(xi, S, u, prm, h, dx, A, B, AS)
        for i in range(6):
            if not math.isfinite(xi[i]):
                return xi, S, 2
    return xi, S, 0


@njit(cache=True)
def _interp_clamped(x, xs, ys):
    n = xs.shape[0]
    if x <= xs[0]:
        return ys[0]
    if x >= xs[n - 1]:
        return ys[n - 1]
    i = np.searchsorted(xs, x, side="right") - 1
    w = (x - xs[i]) / (xs[i + 1] - xs[i])
    return ys[i] + w * (ys[i + 1] - ys[i])


@njit(cache=True)
def closed_spline_point(t, period, frac, cum_s, s_tab, u_tab, breaks, coef):
    """Position on a time-parameterized periodic cubic spline at scalar time ``t``."""
    f = t / period
    f = f - math.floor(f)
    u = _interp_clamped(_interp_clamped(f, frac, cum_s), s_tab, u_tab)
    nb = breaks.shape[0]
    i = np.searchsorted(breaks, u, side="right") - 1
    if i < 0:
        i = 0
    elif i > nb - 2:
        i = nb - 2
    du = u - breaks[i]
    x = ((coef[0, i, 0] * du + coef[1, i, 0]) * du + coef[2, i, 0]) * du + coef[3, i, 0]
    y = ((coef[0, i, 1] * du + coef[1, i, 1]) * du + coef[2, i, 1]) * du + coef[3, i, 1]
    return x, y


@njit(cache=True)
def closed_spline_points(ts, period, frac, cum_s, s_tab, u_tab, breaks, coef):
    out = np.empty((ts.shape[0], 2))
    for k in range(ts.shape[0]):
        x, y = closed_spline_point(ts[k], period, frac, cum_s, s_tab, u_tab, breaks, coef)
        out[k, 0] = x
        out[k, 1] = y
    return out
