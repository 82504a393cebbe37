"""
Conservative waypoint autopilot used as the comparison baseline.

Cascade: along-track/cross-track position P -> speed-capped velocity setpoint
-> velocity PI -> desired thrust vector -> attitude P -> body-rate P -> motor
allocation. The vehicle comes to a full stop at every waypoint. Obstacles are
handled before flight by inserting detour waypoints wherever a straight
segment passes too close to a detected obstacle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vlrr.dynamics import QuadParams, allocation_matrix, quat_conjugate, quat_multiply, quat_to_rotmat


@dataclass(frozen=True)
class AutopilotGains:
    speed_cap: float = 1.0        # m/s
    kp_along: float = 1.2         # 1/s, along-track distance -> speed
    kp_cross: float = 2.0         # 1/s, cross-track error -> lateral speed
    kp_z: float = 1.5
    kp_vel: float = 2.0           # 1/s
    ki_vel: float = 0.3
    max_accel: float = 3.0        # m/s^2, horizontal
    max_tilt: float = np.radians(25.0)
    kp_att: float = 4.0           # 1/s
    kp_rate: float = 10.0         # 1/s
    stop_radius: float = 0.1      # m, full-stop position tolerance (3D)
    stop_speed: float = 0.1       # m/s
    detour_margin: float = 0.5    # m, clearance kept from detected obstacles


@dataclass(frozen=True)
class Waypoint:
    position: tuple[float, float, float]
    target_index: int | None = None  # index into the mission targets, None for detours


def _segment_distance(a: NDArray, b: NDArray, c: NDArray) -> tuple[float, NDArray]:
    ab = b - a
    L2 = float(ab @ ab)
    s = 0.0 if L2 == 0 else float(np.clip((c - a) @ ab / L2, 0.0, 1.0))
    p = a + s * ab
    return float(np.linalg.norm(p - c)), p


def plan_waypoints(start_xy: ArrayLike, targets_xy: ArrayLike, obstacles_xy: ArrayLike,
                   altitude: float, margin: float, max_depth: int = 4) -> list[Waypoint]:
    """Targets in visit order, with detour points inserted around close obstacles."""
    obstacles = np.asarray(obstacles_xy, dtype=float).reshape(-1, 2)

    def route(a: NDArray, b: NDArray, depth: int) -> list[NDArray]:
        if depth >= max_depth:
            return []
        worst = None
        for c in obstacles:
            d, p = _segment_distance(a, b, c)
            if d < margin and (worst is None or d < worst[0]):
                worst = (d, p, c)
        if worst is None:
            return []
        d, p, c = worst
        if d > 1e-9:
            n = (p - c) / d
        else:
            ab = (b - a) / np.linalg.norm(b - a)
            n = np.array([-ab[1], ab[0]])
        detour = c + n * margin * 1.25
        return route(a, detour, depth + 1) + [detour] + route(detour, b, depth + 1)

    out: list[Waypoint] = []
    prev = np.asarray(start_xy, dtype=float)
    for i, t in enumerate(np.asarray(targets_xy, dtype=float).reshape(-1, 2)):
        for d in route(prev, t, 0):
            out.append(Waypoint((float(d[0]), float(d[1]), altitude)))
        out.append(Waypoint((float(t[0]), float(t[1]), altitude), target_index=i))
        prev = t
    return out


class CascadedPidAutopilot:
    """Tracks straight segments between waypoints, stopping at each one.

    Stateful (velocity integrator, current segment); one instance per flight.
    """

    def __init__(self, params: QuadParams, gains: AutopilotGains = AutopilotGains()):
        self.params = params
        self.gains = gains
        self._alloc_inv = np.linalg.inv(allocation_matrix(params))
        self._integ = np.zeros(3)
        self._seg_start: NDArray | None = None
        self._seg_end: NDArray | None = None

    def set_segment(self, start: ArrayLike, end: ArrayLike) -> None:
        self._seg_start = np.asarray(start, dtype=float)
        self._seg_end = np.asarray(end, dtype=float)
        self._integ[:] = 0.0

    def stopped_at(self, x: ArrayLike, wp: ArrayLike) -> bool:
        x = np.asarray(x)
        g = self.gains
        return bool(np.linalg.norm(x[:3] - np.asarray(wp)) <= g.stop_radius
                    and np.linalg.norm(x[3:6]) <= g.stop_speed)

    def velocity_setpoint(self, p: NDArray) -> NDArray:
        g = self.gains
        a, b = self._seg_start, self._seg_end
        ab = b[:2] - a[:2]
        L = float(np.linalg.norm(ab))
        v = np.zeros(3)
        if L > 1e-9:
            t_hat = ab / L
            along = float((p[:2] - a[:2]) @ t_hat)
            remaining = L - along
            v[:2] = np.clip(g.kp_along * remaining, -g.speed_cap, g.speed_cap) * t_hat
            cross = (a[:2] + np.clip(along, 0.0, L) * t_hat) - p[:2]
            v[:2] += g.kp_cross * (cross - (cross @ t_hat) * t_hat)
        else:
            v[:2] = g.kp_along * (b[:2] - p[:2])
        v[2] = g.kp_z * (b[2] - p[2])
        n = np.linalg.norm(v)
        if n > g.speed_cap:
            v *= g.speed_cap / n
        return v

    def command(self, x: ArrayLike, dt: float) -> NDArray[np.float64]:
        """Motor thrusts for the current state."""
        if self._seg_end is None:
            raise RuntimeError("no active segment")
        g, prm = self.gains, self.params
        x = np.asarray(x, dtype=float)
        p, v, q, w = x[0:3], x[3:6], x[6:10], x[10:13]

        v_err = self.velocity_setpoint(p) - v
        self._integ = np.clip(self._integ + v_err * dt, -1.0, 1.0)
        acc = g.kp_vel * v_err + g.ki_vel * self._integ
        h = np.linalg.norm(acc[:2])
        if h > g.max_accel:
            acc[:2] *= g.max_accel / h

        f = prm.m * (acc + np.array([0.0, 0.0, prm.g_mag]))
        f[2] = max(f[2], 0.2 * prm.m * prm.g_mag)
        h = np.linalg.norm(f[:2])
        h_max = np.tan(g.max_tilt) * f[2]
        if h > h_max:
            f[:2] *= h_max / h
        b3_des = f / np.linalg.norm(f)

        R = quat_to_rotmat(q)
        thrust = max(float(f @ R[:, 2]), 0.0)

        # desired attitude with zero yaw: shortest rotation taking e3 onto b3_des
        axis = np.array([-b3_des[1], b3_des[0], 0.0])
        s = np.linalg.norm(axis)
        angle = np.arccos(np.clip(b3_des[2], -1.0, 1.0))
        q_des = np.array([1.0, 0.0, 0.0, 0.0]) if s < 1e-12 else np.concatenate(
            [[np.cos(angle / 2)], np.sin(angle / 2) * axis / s])
        q_err = quat_multiply(quat_conjugate(q), q_des)
        if q_err[0] < 0:
            q_err = -q_err
        w_cmd = g.kp_att * 2.0 * q_err[1:]
        J = prm.inertia
        tau = J * g.kp_rate * (w_cmd - w) + np.cross(w, J * w)

        u = self._alloc_inv @ np.concatenate([[thrust], tau])
        return np.clip(u, 0.0, prm.u_max)

