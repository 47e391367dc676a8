"""Fixed-step explicit integrators (forward Euler and classical RK4)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

Field = Callable[[np.ndarray, float], np.ndarray]

EULER = "euler"
RK4 = "rk4"
METHODS = (EULER, RK4)

# (t1 - t0) / dt within this of an integer counts as an exact multiple
_STEP_COUNT_TOL = 1e-9


class IntegrationError(ArithmeticError):
    """A vector field produced a non-finite derivative."""

    def __init__(self, t: float, index: int, message: str | None = None):
        self.t = t
        self.index = index
        super().__init__(message or f"non-finite derivative at t={t!r}, component {index}")


@dataclass(frozen=True)
class StepConfig:
    dt: float
    method: str = EULER

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")


def _checked(field: Field, x: np.ndarray, t: float) -> np.ndarray:
    dx = np.asarray(field(x, t), dtype=float)
    if not np.all(np.isfinite(dx)):
        bad = int(np.flatnonzero(~np.isfinite(dx.ravel()))[0])
        raise IntegrationError(t, bad)
    return dx


def _advance(field: Field, x: np.ndarray, t: float, h: float, method: str) -> np.ndarray:
    if method == EULER:
        return x + h * _checked(field, x, t)
    k1 = _checked(field, x, t)
    k2 = _checked(field, x + 0.5 * h * k1, t + 0.5 * h)
    k3 = _checked(field, x + 0.5 * h * k2, t + 0.5 * h)
    k4 = _checked(field, x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(field: Field, x, t: float, cfg: StepConfig) -> np.ndarray:
    """Advance ``x`` by one step of length ``cfg.dt`` starting at time ``t``."""
    return _advance(field, np.asarray(x, dtype=float), t, cfg.dt, cfg.method)


def step_count(span: float, dt: float) -> tuple[int, float]:
    """Split ``span`` into ``(n_full_steps, remainder)`` for step size ``dt``.

    The remainder is zero when ``span`` is an integer multiple of ``dt`` up to
    a relative tolerance of 1e-9; otherwise it is the length of one shortened
    final step.
    """
    if span <= 0:
        return 0, 0.0
    ratio = span / dt
    nearest = round(ratio)
    if abs(ratio - nearest) <= _STEP_COUNT_TOL * max(1.0, ratio):
        return int(nearest), 0.0
    n = int(math.floor(ratio))
    return n, span - n * dt


def integrate(field: Field, x0, t0: float, t1: float, cfg: StepConfig) -> np.ndarray:
    """Integrate ``field`` from ``t0`` to ``t1`` and return the state at ``t1``.

    Uses ``cfg.dt`` throughout and, when ``t1 - t0`` is not a multiple of it,
    one shorter final step to land exactly on ``t1``.
    """
    if t1 < t0:
        raise ValueError(f"t1 ({t1!r}) must not precede t0 ({t0!r})")
    x = np.array(x0, dtype=float)
    n, rem = step_count(t1 - t0, cfg.dt)
    for i in range(n):
        x = _advance(field, x, t0 + i * cfg.dt, cfg.dt, cfg.method)
    if rem > 0:
        x = _advance(field, x, t0 + n * cfg.dt, rem, cfg.method)
    return x
