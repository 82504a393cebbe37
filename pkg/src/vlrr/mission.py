"""
Closed-loop missions and timing comparisons.

Both controllers fly the same simulated plant from a hover at the scene's start
point, visiting targets in detection order at a fixed altitude:

* ``run_mission_nmpc``: point-to-point NMPC towards the active target; the next
  target becomes active as soon as the vehicle passes within ``r_arrive``
  (no need to stop).
* ``run_mission_baseline``: the cascaded-PID autopilot, stopping at every
  waypoint, with detours planned around detected obstacles.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from vlrr.autopilot import AutopilotGains, CascadedPidAutopilot, plan_waypoints
from vlrr.dynamics import hover_command, hover_state
from vlrr.geo import WorldPoint
from vlrr.nmpc import NmpcController, Obstacle, OcpSolution, ReferenceState, SolverFailure
from vlrr.scene import Scene
from vlrr.sim import FlightMetrics, SimConfig, Simulator, TrajectoryLog, metrics

R_ARRIVE = 0.15
TIMEOUT_S = 120.0
DEFAULT_RATE_HZ = 20.0


class MissionAborted(RuntimeError):
    """The controller failed mid-flight; ``result`` carries the partial log."""

    def __init__(self, message: str, result: "MissionResult"):
        super().__init__(message)
        self.result = result


@dataclass
class MissionResult:
    scene_name: str
    controller: str
    completion_time: float
    visited: list[tuple[bool, float | None]]
    min_clearance: float
    log: TrajectoryLog
    success: bool
    in_arena: bool = True
    planning_latency: float = 0.0
    flight_metrics: FlightMetrics | None = None
    notes: dict = field(default_factory=dict)

    @property
    def total_time(self) -> float:
        """Flight time plus planning latency."""
        return self.completion_time + self.planning_latency

    @classmethod
    def recorded(cls, scene_name: str, controller: str, completion_time: float) -> "MissionResult":
        """A result that only carries an externally recorded completion time."""
        return cls(scene_name, controller, float(completion_time), [], math.inf, TrajectoryLog(),
                   True)

    def summary(self) -> dict:
        m = self.flight_metrics
        return {
            "scene": self.scene_name,
            "controller": self.controller,
            "success": self.success,
            "completion_time_s": self.completion_time,
            "planning_latency_s": self.planning_latency,
            "total_time_s": self.total_time,
            "visited": [{"visited": v, "time_s": t} for v, t in self.visited],
            "min_clearance_m": self.min_clearance,
            "in_arena": self.in_arena,
            "path_length_m": None if m is None else m.path_length,
            "max_speed_mps": None if m is None else m.max_speed,
            "mean_solve_time_s": None if m is None else m.mean_solve_time,
            "cycles": len(self.log),
        }


def arrival_check(x: ArrayLike, target: WorldPoint, r_arrive: float = R_ARRIVE) -> bool:
    """True when the horizontal distance to ``target`` is at most ``r_arrive``."""
    x = np.asarray(getattr(x, "to_array", lambda: x)(), dtype=float)
    return bool(math.hypot(x[0] - target.x, x[1] - target.y) <= r_arrive)


def _unpack_detections(detections) -> tuple[list[WorldPoint], list[WorldPoint]]:
    if hasattr(detections, "targets"):
        targets, obstacles = detections.targets, detections.obstacles
    else:
        targets, obstacles = detections
    targets, obstacles = list(targets), list(obstacles or ())
    if not targets:
        raise ValueError("mission needs at least one target")
    return targets, obstacles


def _finish(scene: Scene, controller: str, log: TrajectoryLog, arrivals: list[float | None],
            t_end: float, planning_latency: float) -> MissionResult:
    fm = metrics(log, scene) if len(log) else None
    clearance = fm.min_clearance if fm else math.inf
    in_arena = all(scene.arena_bounds.contains(p) for p in log.states[:, :3]) if len(log) else True
    all_visited = all(a is not None for a in arrivals)
    success = all_visited and clearance >= scene.ocp.r_safe and in_arena
    completion = arrivals[-1] if all_visited else t_end
    return MissionResult(scene.name, controller, completion, [(a is not None, a) for a in arrivals],
                         clearance, log, success, in_arena, planning_latency, fm)


def run_mission_nmpc(scene: Scene, detections, altitude: float | None = None,
                     rate_hz: float = DEFAULT_RATE_HZ, *, sim_cfg: SimConfig = SimConfig(),
                     r_arrive: float = R_ARRIVE, timeout: float = TIMEOUT_S,
                     planning_latency: float = 0.0) -> MissionResult:
    """Fly all targets with the NMPC.

    Raises:
        MissionAborted: the solver failed; the exception carries the partial result.
    """
    targets, obstacles_wp = _unpack_detections(detections)
    cfg, params = scene.ocp, scene.quad
    cycle = 1.0 / rate_hz
    if abs(cycle - cfg.dt) > 1e-9:
        raise ValueError(f"control period {cycle} s must equal the OCP step {cfg.dt} s")
    altitude = scene.altitude if altitude is None else altitude
    obstacles = [Obstacle((w.x, w.y)) for w in obstacles_wp]

    ctrl = NmpcController(cfg, params)
    plant = Simulator(params, sim_cfg)
    log = TrajectoryLog()
    arrivals: list[float | None] = [None] * len(targets)
    x = hover_state((*scene.start_xy, altitude))
    active = 0
    k = 0
    while True:
        t = k * cycle
        while active < len(targets) and arrival_check(x, targets[active], r_arrive):
            arrivals[active] = t
            active += 1
        if active == len(targets) or t >= timeout:
            log.append(t, x, hover_command(params).u, active)
            break
        tgt = targets[active]
        try:
            sol: OcpSolution = ctrl.step(x, ReferenceState.at((tgt.x, tgt.y, altitude)), obstacles)
        except SolverFailure as exc:
            result = _finish(scene, "nmpc", log, arrivals, t, planning_latency)
            result.success = False
            raise MissionAborted(f"solver failure at t={t:.2f}s: {exc}", result) from exc
        u = sol.inputs[0]
        log.append(t, x, u, active, sol.iterations, sol.kkt_residual, sol.solve_time)
        x = plant.step(x, u, cycle)
        k += 1
    return _finish(scene, "nmpc", log, arrivals, t, planning_latency)


def run_mission_baseline(scene: Scene, detections, altitude: float | None = None,
                         rate_hz: float = DEFAULT_RATE_HZ, *, sim_cfg: SimConfig = SimConfig(),
                         gains: AutopilotGains = AutopilotGains(), r_arrive: float = R_ARRIVE,
                         timeout: float = TIMEOUT_S, planning_latency: float = 0.0) -> MissionResult:
    """Fly all targets with the stop-at-every-waypoint autopilot."""
    targets, obstacles_wp = _unpack_detections(detections)
    params = scene.quad
    cycle = 1.0 / rate_hz
    altitude = scene.altitude if altitude is None else altitude
    waypoints = plan_waypoints(scene.start_xy, [(w.x, w.y) for w in targets],
                               [(w.x, w.y) for w in obstacles_wp], altitude, gains.detour_margin)

    pilot = CascadedPidAutopilot(params, gains)
    plant = Simulator(params, sim_cfg)
    log = TrajectoryLog()
    arrivals: list[float | None] = [None] * len(targets)
    x = hover_state((*scene.start_xy, altitude))
    wp_idx = 0
    seg_start = x[:3].copy()
    pilot.set_segment(seg_start, waypoints[0].position)
    active = 0
    k = 0
    while True:
        t = k * cycle
        while wp_idx < len(waypoints):
            wp = waypoints[wp_idx]
            if not pilot.stopped_at(x, wp.position):
                break
            if wp.target_index is not None and arrival_check(x, targets[wp.target_index], r_arrive):
                arrivals[wp.target_index] = t
                active = wp.target_index + 1
            wp_idx += 1
            if wp_idx < len(waypoints):
                pilot.set_segment(wp.position, waypoints[wp_idx].position)
        if wp_idx == len(waypoints) or t >= timeout:
            log.append(t, x, hover_command(params).u, active)
            break
        u = pilot.command(x, cycle)
        log.append(t, x, u, active)
        x = plant.step(x, u, cycle)
        k += 1
    result = _finish(scene, "baseline", log, arrivals, t, planning_latency)
    result.notes["waypoints"] = [w.position for w in waypoints]
    return result


# -- comparisons -------------------------------------------------------------------------

def speedup(t_fast: float, t_slow: float) -> float:
    """Percent reduction of ``t_fast`` relative to ``t_slow``."""
    if t_fast <= 0 or t_slow <= 0:
        raise ValueError("times must be positive")
    return 100.0 * (1.0 - t_fast / t_slow)


def format_percent(value: float) -> str:
    """Up to two decimals, trailing zeros dropped but at least one decimal (30.0, 33.75, 54.6)."""
    s = f"{value:.2f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


@dataclass
class ComparisonReport:
    scene_name: str
    times: list[tuple[str, float]]
    speedups: list[tuple[str, str, float]]  # (faster label, slower label, percent)
    clearances: list[tuple[str, float]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["scene", "kind", "label", "other", "value"])
        for label, t in self.times:
            w.writerow([self.scene_name, "completion_time_s", label, "", repr(t)])
        for label, c in self.clearances:
            w.writerow([self.scene_name, "min_clearance_m", label, "", repr(c)])
        for a, b, s in self.speedups:
            w.writerow([self.scene_name, "speedup_pct", a, b, repr(s)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"Scene {self.scene_name}"]
        for label, t in self.times:
            lines.append(f"  {label:<10s} {t:8.2f} s")
        for a, b, s in self.speedups:
            lines.append(f"  {a} vs {b}: {s:.1f}% faster")
        return "\n".join(lines)


def compare_report(results: Sequence[tuple[str, MissionResult]]) -> ComparisonReport:
    """Completion times and speedups of the first entry relative to every other one."""
    if len(results) < 2:
        raise ValueError("need at least two results to compare")
    scenes = {r.scene_name for _, r in results}
    if len(scenes) != 1:
        raise ValueError(f"results come from different scenes: {sorted(scenes)}")
    times = [(label, r.completion_time) for label, r in results]
    ref_label, ref = results[0]
    speedups = [(ref_label, label, speedup(ref.completion_time, r.completion_time))
                for label, r in results[1:]]
    clearances = [(label, r.min_clearance) for label, r in results]
    return ComparisonReport(scenes.pop(), times, speedups, clearances)


def average_speedups(reports: Sequence[ComparisonReport]) -> dict[str, float]:
    """Mean speedup per compared label across scenes.

    Per-scene values are rounded to 0.1 % before averaging, the precision at
    which per-scene speedups are reported.
    """
    acc: dict[str, list[float]] = {}
    for rep in reports:
        for _, other, s in rep.speedups:
            acc.setdefault(other, []).append(round(s, 1))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def write_report_csv(reports: Sequence[ComparisonReport], path: str | Path) -> Path:
    path = Path(path)
    parts = [reports[0].to_csv()] + [r.to_csv().split("\n", 1)[1] for r in reports[1:]]
    path.write_text("".join(parts), encoding="utf-8")
    return path
