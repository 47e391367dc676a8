"""Plant models: dynamic bicycle, unicycle with kinematic-point lift, test plants.

Every plant is exposed as an immutable :class:`PlantModel` carrying the vector
field ``f(x, u)``, the output map ``h(x)`` and their partial derivatives, which
is all the predictor and controller need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._validation import check_positive

V_MIN = 0.1  # m/s; the tire-force model divides by v_l

BICYCLE_STATE = ("z1", "z2", "v_l", "v_n", "psi", "psi_dot")
BICYCLE_INPUT = ("a_l", "delta_f")
UNICYCLE_STATE = ("z1", "z2", "psi")


class LowSpeedError(ValueError):
    """Longitudinal velocity fell below the bicycle model's floor."""

    def __init__(self, v_l: float, v_min: float = V_MIN):
        self.v_l = v_l
        self.v_min = v_min
        super().__init__(f"longitudinal velocity {v_l!r} m/s below floor {v_min} m/s")


@dataclass(frozen=True)
class PlantModel:
    """State-space plant ``x' = f(x, u)``, ``y = h(x)`` with derivatives.

    ``heading`` optionally returns the plant's heading angle for heading-error
    metrics. ``fused_euler`` is an optional fast path for the predictor with the
    signature ``(x, u, n_steps, dt, rem) -> (xi_end, sensitivity)``.
    """

    n: int
    m: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    df_dx: Callable[[np.ndarray, np.ndarray], np.ndarray]
    df_du: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dh_dx: Callable[[np.ndarray], np.ndarray]
    name: str = "plant"
    state_names: tuple = ()
    input_names: tuple = ()
    heading: Optional[Callable[[np.ndarray], float]] = None
    fused_euler: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"dimensions must be positive, got n={self.n}, m={self.m}")
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"x{i + 1}" for i in range(self.n)))
        if not self.input_names:
            object.__setattr__(self, "input_names", tuple(f"u{i + 1}" for i in range(self.m)))


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------

def fd_matrix(func, z, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``func`` at ``z``.

    The step for component ``i`` is ``rel_step * max(1, |z_i|)``.
    """
    z = np.asarray(z, dtype=float)
    f0 = np.asarray(func(z), dtype=float)
    jac = np.empty((f0.size, z.size))
    for i in range(z.size):
        h = rel_step * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        jac[:, i] = (np.asarray(func(zp), dtype=float) - np.asarray(func(zm), dtype=float)) / (2.0 * h)
    return jac


def with_fd_derivatives(plant: PlantModel, rel_step: float = 1e-6) -> PlantModel:
    """Copy of ``plant`` whose derivative callbacks use central differences."""
    f, h = plant.f, plant.h
    return PlantModel(
        n=plant.n,
        m=plant.m,
        f=f,
        h=h,
        df_dx=lambda x, u: fd_matrix(lambda z: f(z, u), x, rel_step),
        df_du=lambda x, u: fd_matrix(lambda v: f(x, v), u, rel_step),
        dh_dx=lambda x: fd_matrix(h, x, rel_step),
        name=plant.name + "-fd",
        state_names=plant.state_names,
        input_names=plant.input_names,
        heading=plant.heading,
    )


# --------------------------------------------------------------------------
# dynamic bicycle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BicycleParams:
    """Vehicle constants for the dynamic bicycle model (SI units)."""

    m_kg: float
    Iz: float
    lf: float
    lr: float
    Caf: float
    Car: float

    def __post_init__(self):
        for name in ("m_kg", "Iz", "lf", "lr", "Caf", "Car"):
            check_positive(getattr(self, name), name)

    def as_array(self) -> np.ndarray:
        return np.array([self.m_kg, self.Iz, self.lf, self.lr, self.Caf, self.Car])


# Parameter sets used in the closed-curve and lane-change experiments.
CLOSED_CURVE_VEHICLE = BicycleParams(m_kg=1587.0, Iz=2315.3, lf=1.218, lr=1.628, Caf=35000.0, Car=35000.0)
LANE_CHANGE_VEHICLE = BicycleParams(m_kg=2050.0, Iz=3344.0, lf=1.105, lr=1.738, Caf=57500.0, Car=92500.0)


def _tire_forces(x, u, p: BicycleParams, v_min: float):
    _, _, vl, vn, _, r = x
    if not vl >= v_min:
        raise LowSpeedError(float(vl), v_min)
    delta = u[1]
    bf = (vn + p.lf * r) / vl
    br = (vn - p.lr * r) / vl
    fcf = p.Caf * (delta - math.atan(bf))
    fcr = -p.Car * math.atan(br)
    return bf, br, fcf, fcr


def bicycle_f(x, u, p: BicycleParams, v_min: float = V_MIN) -> np.ndarray:
    """Time derivative of the bicycle state ``(z1, z2, v_l, v_n, psi, psi_dot)``."""
    _, _, vl, vn, psi, r = x
    a, delta = u
    _, _, fcf, fcr = _tire_forces(x, u, p, v_min)
    c, s = math.cos(psi), math.sin(psi)
    cd = math.cos(delta)
    return np.array([
        vl * c - vn * s,
        vl * s + vn * c,
        r * vn + a,
        -r * vl + 2.0 * (fcf * cd + fcr) / p.m_kg,
        r,
        2.0 * (p.lf * fcf * cd - p.lr * fcr) / p.Iz,
    ])


def bicycle_df_dx(x, u, p: BicycleParams, v_min: float = V_MIN) -> np.ndarray:
    _, _, vl, vn, psi, r = x
    delta = u[1]
    bf, br, fcf, fcr = _tire_forces(x, u, p, v_min)
    c, s = math.cos(psi), math.sin(psi)
    cd = math.cos(delta)
    # d(atan(beta))/d(v_l, v_n, r) for front and rear slip ratios
    kf = 1.0 / (1.0 + bf * bf)
    kr = 1.0 / (1.0 + br * br)
    dfcf = -p.Caf * kf * np.array([-bf / vl, 1.0 / vl, p.lf / vl])
    dfcr = -p.Car * kr * np.array([-br / vl, 1.0 / vl, -p.lr / vl])
    lat = 2.0 * (cd * dfcf + dfcr) / p.m_kg
    yaw = 2.0 * (p.lf * cd * dfcf - p.lr * dfcr) / p.Iz
    J = np.zeros((6, 6))
    J[0, 2], J[0, 3], J[0, 4] = c, -s, -vl * s - vn * c
    J[1, 2], J[1, 3], J[1, 4] = s, c, vl * c - vn * s
    J[2, 3], J[2, 5] = r, vn
    J[3, 2], J[3, 3], J[3, 5] = lat[0] - r, lat[1], lat[2] - vl
    J[4, 5] = 1.0
    J[5, 2], J[5, 3], J[5, 5] = yaw[0], yaw[1], yaw[2]
    return J


def bicycle_df_du(x, u, p: BicycleParams, v_min: float = V_MIN) -> np.ndarray:
    delta = u[1]
    _, _, fcf, _ = _tire_forces(x, u, p, v_min)
    d_steer = p.Caf * math.cos(delta) - fcf * math.sin(delta)
    B = np.zeros((6, 2))
    B[2, 0] = 1.0
    B[3, 1] = 2.0 * d_steer / p.m_kg
    B[5, 1] = 2.0 * p.lf * d_steer / p.Iz
    return B


BICYCLE_C = np.array([
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
])


def bicycle_h(x) -> np.ndarray:
    """Planar position of the centre of gravity."""
    return BICYCLE_C @ np.asarray(x, dtype=float)


def bicycle_plant(p: BicycleParams, jacobian: str = "analytic", v_min: float = V_MIN) -> PlantModel:
    """Bicycle :class:`PlantModel`; ``jacobian`` is ``"analytic"`` or ``"fd"``."""
    if jacobian not in ("analytic", "fd"):
        raise ValueError(f"jacobian must be 'analytic' or 'fd', got {jacobian!r}")
    check_positive(v_min, "v_min")
    plant = PlantModel(
        n=6,
        m=2,
        f=lambda x, u: bicycle_f(x, u, p, v_min),
        h=bicycle_h,
        df_dx=lambda x, u: bicycle_df_dx(x, u, p, v_min),
        df_du=lambda x, u: bicycle_df_du(x, u, p, v_min),
        dh_dx=lambda x: BICYCLE_C.copy(),
        name="bicycle",
        state_names=BICYCLE_STATE,
        input_names=BICYCLE_INPUT,
        heading=lambda x: float(x[4]),
    )
    if jacobian == "fd":
        return with_fd_derivatives(plant)
    from ._kernels import bicycle_fused_euler

    params = np.append(p.as_array(), v_min)

    def fused(x, u, n_steps, dt, rem):
        xi, sens, status = bicycle_fused_euler(
            np.asarray(x, dtype=float), np.asarray(u, dtype=float), params, n_steps, dt, rem)
        if status == 1:
            raise LowSpeedError(float(xi[2]), v_min)
        if status == 2:
            raise FloatingPointError("non-finite value in fused bicycle prediction")
        return xi, sens

    object.__setattr__(plant, "fused_euler", fused)
    return plant


# --------------------------------------------------------------------------
# unicycle and kinematic point
# --------------------------------------------------------------------------

def unicycle_f(x, u) -> np.ndarray:
    """Unicycle kinematics; ``u = (v_l, omega)``."""
    psi = x[2]
    v, omega = u
    return np.array([v * math.cos(psi), v * math.sin(psi), omega])


def kinematic_point_of(x, l: float) -> np.ndarray:
    """Point at distance ``l`` ahead of the unicycle along its heading."""
    z1, z2, psi = x
    return np.array([z1 + l * math.cos(psi), z2 + l * math.sin(psi)])


def point_to_unicycle(psi: float, l: float, p_dot) -> tuple[float, float]:
    """Map a kinematic-point velocity to unicycle ``(v_l, omega)``."""
    if not l > 0:
        raise ValueError(f"kinematic point offset must be positive, got {l!r}")
    c, s = math.cos(psi), math.sin(psi)
    v = c * p_dot[0] + s * p_dot[1]
    omega = (-s * p_dot[0] + c * p_dot[1]) / l
    return v, omega


def unicycle_plant() -> PlantModel:
    """Unicycle with position output; ``dh_dx`` is singular in heading by design."""
    C = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

    def df_dx(x, u):
        J = np.zeros((3, 3))
        J[0, 2] = -u[0] * math.sin(x[2])
        J[1, 2] = u[0] * math.cos(x[2])
        return J

    def df_du(x, u):
        return np.array([[math.cos(x[2]), 0.0], [math.sin(x[2]), 0.0], [0.0, 1.0]])

    return PlantModel(
        n=3, m=2, f=unicycle_f, h=lambda x: C @ np.asarray(x, dtype=float),
        df_dx=df_dx, df_du=df_du, dh_dx=lambda x: C.copy(), name="unicycle",
        state_names=UNICYCLE_STATE, input_names=("v_l", "omega"),
        heading=lambda x: float(x[2]),
    )


def kinematic_point_plant(l: float) -> PlantModel:
    """Unicycle whose output is the kinematic point ``l`` ahead of it."""
    check_positive(l, "l")
    base = unicycle_plant()

    def h(x):
        return kinematic_point_of(x, l)

    def dh_dx(x):
        return np.array([[1.0, 0.0, -l * math.sin(x[2])], [0.0, 1.0, l * math.cos(x[2])]])

    return PlantModel(
        n=3, m=2, f=base.f, h=h, df_dx=base.df_dx, df_du=base.df_du, dh_dx=dh_dx,
        name="kinematic-point", state_names=UNICYCLE_STATE, input_names=base.input_names,
        heading=base.heading,
    )


# --------------------------------------------------------------------------
# linear test plants
# --------------------------------------------------------------------------

def linear_plant(A, B, C=None, name: str = "linear") -> PlantModel:
    """``x' = A x + B u``, ``y = C x`` (``C`` defaults to the identity)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    C = np.eye(n) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n or C.shape[0] != B.shape[1]:
        raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape}")
    return PlantModel(
        n=n,
        m=B.shape[1],
        f=lambda x, u: A @ np.asarray(x, dtype=float) + B @ np.asarray(u, dtype=float),
        h=lambda x: C @ np.asarray(x, dtype=float),
        df_dx=lambda x, u: A.copy(),
        df_du=lambda x, u: B.copy(),
        dh_dx=lambda x: C.copy(),
        name=name,
    )


def integrator_plant(m: int) -> PlantModel:
    """``x' = u``, ``y = x`` in ``m`` dimensions."""
    if m < 1:
        raise ValueError(f"dimension must be >= 1, got {m}")
    return linear_plant(np.zeros((m, m)), np.eye(m), name="integrator")
