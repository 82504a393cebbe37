"""
Quadrotor rigid-body model.

13-state model: position and velocity in the world frame (z up), scalar-first
unit quaternion body->world, body angular rates. Four motor thrusts in newtons
are the inputs. The same RK4 map is used by the NMPC prediction model and the
plant simulator.

All array functions broadcast over leading dimensions, so a whole horizon of
shooting nodes can be propagated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

NX = 13
NU = 4

POS = slice(0, 3)
VEL = slice(3, 6)
QUAT = slice(6, 10)
RATE = slice(10, 13)

QUAT_TOL = 1e-9


class ContractViolation(ValueError):
    """Raised when an input breaks a documented precondition."""


@dataclass(frozen=True)
class QuadParams:
    m: float = 1.0
    J: tuple[float, float, float] = (0.01, 0.01, 0.02)
    l_x: float = 0.1
    l_y: float = 0.1
    k_t: float = 0.01
    g_mag: float = 9.81
    u_max: float | None = None  # defaults to m * g_mag (thrust-to-weight 4)

    def __post_init__(self):
        object.__setattr__(self, "J", tuple(float(j) for j in self.J))
        if self.u_max is None:
            object.__setattr__(self, "u_max", self.m * self.g_mag)
        if self.m <= 0 or min(self.J) <= 0 or self.l_x <= 0 or self.l_y <= 0 or self.k_t <= 0:
            raise ContractViolation(f"non-positive physical parameter in {self}")
        if self.u_max <= self.m * self.g_mag / 4:
            raise ContractViolation("u_max too small: hover is infeasible")

    @property
    def inertia(self) -> NDArray[np.float64]:
        return np.asarray(self.J)

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g_mag / 4.0

    @classmethod
    def from_dict(cls, d: dict) -> "QuadParams":
        return cls(**d)

    def to_dict(self) -> dict:
        return {"m": self.m, "J": list(self.J), "l_x": self.l_x, "l_y": self.l_y,
                "k_t": self.k_t, "g_mag": self.g_mag, "u_max": self.u_max}


@dataclass(frozen=True)
class QuadState:
    """Value-type view of the 13-vector. The quaternion is renormalized on construction."""

    p_W: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    v_W: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    q_B: NDArray[np.float64] = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    w_B: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        parts = {}
        for name, size in (("p_W", 3), ("v_W", 3), ("q_B", 4), ("w_B", 3)):
            a = np.array(getattr(self, name), dtype=float).reshape(size)
            if not np.all(np.isfinite(a)):
                raise ContractViolation(f"{name} has non-finite entries")
            parts[name] = a
        n = np.linalg.norm(parts["q_B"])
        if n == 0.0:
            raise ContractViolation("zero quaternion")
        parts["q_B"] = parts["q_B"] / n
        for name, a in parts.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def to_array(self) -> NDArray[np.float64]:
        return np.concatenate([self.p_W, self.v_W, self.q_B, self.w_B])

    @classmethod
    def from_array(cls, x: ArrayLike) -> "QuadState":
        x = np.asarray(x, dtype=float)
        return cls(x[POS], x[VEL], x[QUAT], x[RATE])

    @classmethod
    def hover_at(cls, position: ArrayLike) -> "QuadState":
        return cls(p_W=position)


@dataclass(frozen=True)
class MotorCommand:
    u: NDArray[np.float64]

    def __post_init__(self):
        u = np.array(self.u, dtype=float).reshape(NU)
        if not np.all(np.isfinite(u)) or np.any(u < 0):
            raise ContractViolation(f"motor thrusts must be finite and non-negative, got {u}")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    def check_limit(self, params: QuadParams) -> "MotorCommand":
        if np.any(self.u > params.u_max):
            raise ContractViolation(f"motor thrust above u_max={params.u_max}: {self.u}")
        return self


@dataclass(frozen=True)
class WrenchBody:
    thrust_z: float
    tau: NDArray[np.float64]


def _as_array(x, size: int) -> NDArray[np.float64]:
    if isinstance(x, QuadState):
        return x.to_array()
    if isinstance(x, MotorCommand):
        return np.asarray(x.u)
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != size:
        raise ContractViolation(f"expected trailing dimension {size}, got shape {a.shape}")
    return a


def mixing_matrix(params: QuadParams) -> NDArray[np.float64]:
    """3x4 map from motor thrusts to body torques (roll, pitch, yaw)."""
    lx, ly, kt = params.l_x, params.l_y, params.k_t
    return np.array([
        [-ly, ly, ly, -ly],
        [-lx, -lx, lx, lx],
        [kt, -kt, kt, -kt],
    ])


def allocation_matrix(params: QuadParams) -> NDArray[np.float64]:
    """4x4 map from motor thrusts to (total thrust, tau_x, tau_y, tau_z)."""
    return np.vstack([np.ones(4), mixing_matrix(params)])


def motor_mix(u, params: QuadParams) -> WrenchBody:
    u = _as_array(u, NU)
    return WrenchBody(thrust_z=float(np.sum(u)), tau=mixing_matrix(params) @ u)


def quat_multiply(a: NDArray, b: NDArray) -> NDArray:
    """Hamilton product a ⊗ b, scalar-first, broadcasting."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q: NDArray) -> NDArray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_rotmat(q: NDArray) -> NDArray:
    """Rotation matrix of a (unit) quaternion, shape (..., 3, 3)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def quat_rotate(q, v) -> NDArray[np.float64]:
    """Rotate ``v`` from body to world by the unit quaternion ``q``."""
    q = np.asarray(q, dtype=float)
    if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > QUAT_TOL):
        raise ContractViolation(f"quaternion is not unit norm: {q}")
    return np.einsum("...ij,...j->...i", quat_to_rotmat(q), np.asarray(v, dtype=float))


def hover_command(params: QuadParams) -> MotorCommand:
    return MotorCommand(np.full(NU, params.hover_thrust))


def hover_state(position=(0.0, 0.0, 0.0)) -> NDArray[np.float64]:
    x = np.zeros(NX)
    x[POS] = position
    x[6] = 1.0
    return x


def quad_derivative(x, u, params: QuadParams) -> NDArray[np.float64]:
    """Continuous-time state derivative, shape (..., 13)."""
    x = _as_array(x, NX)
    u = _as_array(u, NU)
    q = x[..., QUAT]
    w = x[..., RATE]
    J = params.inertia

    thrust = np.sum(u, axis=-1)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    # third column of R(q): the body z axis in world coordinates
    bz = np.stack([2 * (qx * qz + qw * qy), 2 * (qy * qz - qw * qx),
                   1 - 2 * (qx * qx + qy * qy)], axis=-1)
    v_dot = bz * (thrust / params.m)[..., None]
    v_dot[..., 2] -= params.g_mag

    q_dot = 0.5 * quat_multiply(q, np.concatenate([np.zeros(w.shape[:-1] + (1,)), w], axis=-1))

    tau = np.einsum("ij,...j->...i", mixing_matrix(params), u)
    w_dot = (tau - np.cross(w, w * J)) / J

    return np.concatenate([x[..., VEL], v_dot, q_dot, w_dot], axis=-1)


def _skew(a: NDArray) -> NDArray:
    ax, ay, az = np.moveaxis(a, -1, 0)
    zero = np.zeros_like(ax)
    return np.stack([
        np.stack([zero, -az, ay], axis=-1),
        np.stack([az, zero, -ax], axis=-1),
        np.stack([-ay, ax, zero], axis=-1),
    ], axis=-2)


def quad_derivative_jacobians(x, u, params: QuadParams) -> tuple[NDArray, NDArray]:
    """Analytic partials of ``quad_derivative``: (..., 13, 13) and (..., 13, 4)."""
    x = _as_array(x, NX)
    u = _as_array(u, NU)
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    x = np.broadcast_to(x, batch + (NX,))
    u = np.broadcast_to(u, batch + (NU,))
    q = x[..., QUAT]
    w = x[..., RATE]
    J = params.inertia
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    wx, wy, wz = np.moveaxis(w, -1, 0)
    thrust = np.sum(u, axis=-1)

    fx = np.zeros(batch + (NX, NX))
    fu = np.zeros(batch + (NX, NU))

    fx[..., 0:3, 3:6] = np.eye(3)

    s = (2.0 * thrust / params.m)[..., None]
    dbz_dq = np.stack([
        np.stack([qy, qz, qw, qx], axis=-1),
        np.stack([-qx, -qw, qz, qy], axis=-1),
        np.stack([np.zeros_like(qw), -2 * qx, -2 * qy, np.zeros_like(qw)], axis=-1),
    ], axis=-2)
    fx[..., 3:6, 6:10] = dbz_dq * s[..., None]
    bz = np.stack([2 * (qx * qz + qw * qy), 2 * (qy * qz - qw * qx),
                   1 - 2 * (qx * qx + qy * qy)], axis=-1)
    fu[..., 3:6, :] = (bz / params.m)[..., None]

    zero = np.zeros_like(wx)
    omega = np.stack([
        np.stack([zero, -wx, -wy, -wz], axis=-1),
        np.stack([wx, zero, wz, -wy], axis=-1),
        np.stack([wy, -wz, zero, wx], axis=-1),
        np.stack([wz, wy, -wx, zero], axis=-1),
    ], axis=-2)
    fx[..., 6:10, 6:10] = 0.5 * omega
    xi = np.stack([
        np.stack([-qx, -qy, -qz], axis=-1),
        np.stack([qw, -qz, qy], axis=-1),
        np.stack([qz, qw, -qx], axis=-1),
        np.stack([-qy, qx, qw], axis=-1),
    ], axis=-2)
    fx[..., 6:10, 10:13] = 0.5 * xi

    # d(w x Jw)/dw = [w]x J - [Jw]x
    dgyro = _skew(w) * J - _skew(w * J)
    fx[..., 10:13, 10:13] = -dgyro / J[:, None]
    fu[..., 10:13, :] = mixing_matrix(params) / J[:, None]
    return fx, fu


def _normalize_quat(x: NDArray) -> NDArray:
    x = x.copy()
    x[..., QUAT] /= np.linalg.norm(x[..., QUAT], axis=-1, keepdims=True)
    return x


def rk4_step(x, u, dt: float, params: QuadParams) -> NDArray[np.float64]:
    """One classical RK4 step with ``u`` held constant, quaternion renormalized."""
    if not dt > 0:
        raise ContractViolation(f"dt must be positive, got {dt}")
    x = _as_array(x, NX)
    u = _as_array(u, NU)
    k1 = quad_derivative(x, u, params)
    k2 = quad_derivative(x + 0.5 * dt * k1, u, params)
    k3 = quad_derivative(x + 0.5 * dt * k2, u, params)
    k4 = quad_derivative(x + dt * k3, u, params)
    return _normalize_quat(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


def rk4_step_jacobians(x, u, dt: float, params: QuadParams) -> tuple[NDArray, NDArray, NDArray]:
    """RK4 step plus its forward sensitivities.

    Returns:
        (x_next, A, B) with A = d x_next / d x of shape (..., 13, 13) and
        B = d x_next / d u of shape (..., 13, 4), including the renormalization.
    """
    x = _as_array(x, NX)
    u = _as_array(u, NU)
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    x = np.broadcast_to(x, batch + (NX,))
    u = np.broadcast_to(u, batch + (NU,))
    eye = np.broadcast_to(np.eye(NX), batch + (NX, NX))

    def stage(xs, dxs_dx, dxs_du):
        k = quad_derivative(xs, u, params)
        fx, fu = quad_derivative_jacobians(xs, u, params)
        return k, fx @ dxs_dx, fx @ dxs_du + fu

    zeros_u = np.zeros(batch + (NX, NU))
    k1, k1x, k1u = stage(x, eye, zeros_u)
    k2, k2x, k2u = stage(x + 0.5 * dt * k1, eye + 0.5 * dt * k1x, 0.5 * dt * k1u)
    k3, k3x, k3u = stage(x + 0.5 * dt * k2, eye + 0.5 * dt * k2x, 0.5 * dt * k2u)
    k4, k4x, k4u = stage(x + dt * k3, eye + dt * k3x, dt * k3u)

    raw = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    A = eye + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    B = dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)

    q = raw[..., QUAT]
    nq = np.linalg.norm(q, axis=-1)[..., None, None]
    qn = q / nq[..., 0]
    P = (np.eye(4) - qn[..., :, None] * qn[..., None, :]) / nq
    A = A.copy()
    A[..., QUAT, :] = P @ A[..., QUAT, :]
    B[..., QUAT, :] = P @ B[..., QUAT, :]
    out = raw.copy()
    out[..., QUAT] = qn
    return out, A, B
