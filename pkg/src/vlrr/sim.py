"""Plant simulator, trajectory log and flight metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vlrr.dynamics import NU, NX, QuadParams, rk4_step

STATE_COLUMNS = ("px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz")
INPUT_COLUMNS = ("u1", "u2", "u3", "u4")
LOG_COLUMNS = ("t",) + STATE_COLUMNS + INPUT_COLUMNS + ("target", "sqp_iters", "kkt_residual", "solve_time")
# columns that depend on wall-clock time and are excluded from determinism checks
TIMING_COLUMNS = ("solve_time",)


class SimulationFault(RuntimeError):
    pass


class LogParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class SimConfig:
    substeps: int = 4
    disturbance_accel_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.disturbance_accel_std < 0:
            raise ValueError("disturbance std must be non-negative")


def sim_step(x: ArrayLike, u: ArrayLike, cycle_dt: float, cfg: SimConfig, params: QuadParams,
             rng: np.random.Generator | None = None) -> NDArray[np.float64]:
    """Advance the plant by one control cycle with ``cfg.substeps`` RK4 substeps.

    With a disturbance configured, a zero-mean Gaussian acceleration is drawn per
    substep and applied to the velocity. Pass a persistent ``rng`` to get a fresh
    draw each cycle; otherwise one is seeded from ``cfg.seed``.
    """
    h = cycle_dt / cfg.substeps
    x = np.asarray(getattr(x, "to_array", lambda: x)(), dtype=float)
    u = np.asarray(getattr(u, "u", u), dtype=float)
    if cfg.disturbance_accel_std > 0 and rng is None:
        rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.substeps):
        x = rk4_step(x, u, h, params)
        if cfg.disturbance_accel_std > 0:
            x[3:6] += rng.normal(0.0, cfg.disturbance_accel_std, size=3) * h
    if not np.all(np.isfinite(x)):
        raise SimulationFault(f"non-finite plant state {x}")
    return x


class Simulator:
    """Stateful wrapper holding the disturbance RNG. One instance per mission."""

    def __init__(self, params: QuadParams, cfg: SimConfig = SimConfig()):
        self.params = params
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)

    def step(self, x: ArrayLike, u: ArrayLike, cycle_dt: float) -> NDArray[np.float64]:
        return sim_step(x, u, cycle_dt, self.cfg, self.params, rng=self.rng)


class TrajectoryLog:
    """One row per control cycle, columns as in ``LOG_COLUMNS``."""

    columns = LOG_COLUMNS

    def __init__(self, rows: Iterable[Sequence[float]] = ()):
        self._rows: list[tuple[float, ...]] = []
        for row in rows:
            self._append_row(tuple(float(v) for v in row))

    def _append_row(self, row: tuple[float, ...]) -> None:
        if len(row) != len(LOG_COLUMNS):
            raise ValueError(f"row has {len(row)} fields, expected {len(LOG_COLUMNS)}")
        if self._rows and not row[0] > self._rows[-1][0]:
            raise ValueError(f"log time must increase strictly: {row[0]} after {self._rows[-1][0]}")
        self._rows.append(row)

    def append(self, t: float, x: ArrayLike, u: ArrayLike, target: int = -1, sqp_iters: int = 0,
               kkt_residual: float = 0.0, solve_time: float = 0.0) -> None:
        x = np.asarray(x, dtype=float).reshape(NX)
        u = np.asarray(u, dtype=float).reshape(NU)
        self._append_row((float(t), *map(float, x), *map(float, u), float(target), float(sqp_iters),
                          float(kkt_residual), float(solve_time)))

    def __len__(self) -> int:
        return len(self._rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, TrajectoryLog) and self._rows == other._rows

    @property
    def rows(self) -> list[tuple[float, ...]]:
        return list(self._rows)

    @property
    def data(self) -> NDArray[np.float64]:
        return np.array(self._rows, dtype=float).reshape(len(self._rows), len(LOG_COLUMNS))

    def column(self, name: str) -> NDArray[np.float64]:
        return self.data[:, LOG_COLUMNS.index(name)]

    @property
    def t(self) -> NDArray[np.float64]:
        return self.column("t")

    @property
    def states(self) -> NDArray[np.float64]:
        return self.data[:, 1:1 + NX]

    @property
    def inputs(self) -> NDArray[np.float64]:
        return self.data[:, 1 + NX:1 + NX + NU]

    def deterministic_rows(self) -> list[tuple[float, ...]]:
        """Rows with the wall-clock timing columns blanked, for reproducibility checks."""
        drop = [LOG_COLUMNS.index(c) for c in TIMING_COLUMNS]
        return [tuple(0.0 if i in drop else v for i, v in enumerate(r)) for r in self._rows]


@dataclass(frozen=True)
class FlightMetrics:
    min_clearance: float
    path_length: float
    max_speed: float
    mean_solve_time: float


def min_clearance_xy(positions: ArrayLike, obstacles_xy: ArrayLike) -> float:
    obs = np.asarray(obstacles_xy, dtype=float).reshape(-1, 2)
    if len(obs) == 0:
        return math.inf
    p = np.asarray(positions, dtype=float)[:, :2]
    d = np.linalg.norm(p[:, None, :] - obs[None, :, :], axis=-1)
    return float(d.min())


def metrics(log: TrajectoryLog, scene) -> FlightMetrics:
    """Clearance is measured against the scene's ground-truth obstacles."""
    if len(log) == 0:
        raise ValueError("empty trajectory log")
    S = log.states
    obs = [(w.x, w.y) for w in scene.obstacles_truth]
    return FlightMetrics(
        min_clearance=min_clearance_xy(S[:, :3], obs),
        path_length=float(np.sum(np.linalg.norm(np.diff(S[:, :3], axis=0), axis=1))),
        max_speed=float(np.max(np.linalg.norm(S[:, 3:6], axis=1))),
        mean_solve_time=float(np.mean(log.column("solve_time"))),
    )


def export_log(log: TrajectoryLog, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in log.rows:
            w.writerow([repr(v) for v in row])
    return path


def load_log(path: str | Path) -> TrajectoryLog:
    log = TrajectoryLog()
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != LOG_COLUMNS:
            raise LogParseError("unexpected header", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(LOG_COLUMNS):
                raise LogParseError(f"expected {len(LOG_COLUMNS)} fields, got {len(row)}", lineno)
            try:
                log._append_row(tuple(float(v) for v in row))
            except ValueError as exc:
                raise LogParseError(str(exc), lineno) from exc
    return log
