"""
Point-to-point NMPC with obstacle penalties.

The optimal control problem is transcribed by multiple shooting: every node
state x(0..N) and every input u(0..N-1) is a decision variable, tied together
by the RK4 map. Each control cycle runs a few Gauss-Newton SQP iterations
(real-time iteration style) warm-started from the previous cycle.

The stage cost is a sum of squares,

    l(x, u) = |x - x_r|^2_Q + |u|^2_R + sum_obs w exp(-d^2 / (2 sigma^2)),

where each obstacle bump is written as the square of
sqrt(w) exp(-d^2 / (4 sigma^2)) so that the whole cost is a least-squares
residual. The QP subproblem is condensed onto the input increments and solved
as a bound-constrained linear least-squares problem.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import lsq_linear

from vlrr.dynamics import NU, NX, QuadParams, hover_state, rk4_step, rk4_step_jacobians

DEFAULT_Q = (10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.1, 0.1, 0.1)


class SolverFailure(RuntimeError):
    """The SQP loop hit a non-finite value or an unsolvable subproblem."""

    def __init__(self, message: str, last_iterate: "OcpSolution | None" = None):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class OcpConfig:
    N: int = 20
    dt: float = 0.05
    Q: tuple[float, ...] = DEFAULT_Q
    R_w: tuple[float, ...] = (0.1, 0.1, 0.1, 0.1)
    u_min: float = 0.0
    u_max: float | None = None  # None -> QuadParams.u_max
    w_obs: float = 400.0
    sigma_obs: float = 0.25
    r_safe: float = 0.25
    max_sqp_iters: int = 3
    kkt_tol: float = 1e-4
    levenberg: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "Q", tuple(float(q) for q in self.Q))
        object.__setattr__(self, "R_w", tuple(float(r) for r in self.R_w))
        if self.N < 2 or self.dt <= 0:
            raise ValueError(f"need N >= 2 and dt > 0, got N={self.N}, dt={self.dt}")
        if len(self.Q) != NX or len(self.R_w) != NU:
            raise ValueError("Q must have 13 entries and R_w 4 entries")
        if min(self.Q) < 0 or min(self.R_w) < 0 or max(self.Q[:3]) <= 0:
            raise ValueError("weights must be non-negative with a positive position weight")
        if self.u_min < 0 or (self.u_max is not None and self.u_max <= self.u_min):
            raise ValueError("need 0 <= u_min < u_max")
        if self.w_obs < 0 or self.sigma_obs <= 0 or self.r_safe <= 0:
            raise ValueError("need w_obs >= 0, sigma_obs > 0, r_safe > 0")

    def input_bounds(self, params: QuadParams) -> tuple[float, float]:
        return self.u_min, params.u_max if self.u_max is None else self.u_max

    @classmethod
    def from_dict(cls, d: dict) -> "OcpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown OcpConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}


@dataclass(frozen=True)
class ReferenceState:
    x_r: NDArray[np.float64]

    def __post_init__(self):
        x = np.array(self.x_r, dtype=float).reshape(NX)
        if abs(np.linalg.norm(x[6:10]) - 1.0) > 1e-9:
            raise ValueError("reference quaternion must be unit norm")
        if np.any(x[3:6] != 0) or np.any(x[10:13] != 0):
            raise ValueError("reference velocity and rates must be zero")
        x.setflags(write=False)
        object.__setattr__(self, "x_r", x)

    @classmethod
    def at(cls, position: ArrayLike) -> "ReferenceState":
        return cls(hover_state(position))


@dataclass(frozen=True)
class Obstacle:
    center_xy: tuple[float, float]

    def __post_init__(self):
        c = tuple(float(v) for v in self.center_xy)
        if len(c) != 2 or not all(np.isfinite(c)):
            raise ValueError(f"bad obstacle center {self.center_xy}")
        object.__setattr__(self, "center_xy", c)


def _centers(obstacles: Sequence[Obstacle]) -> NDArray[np.float64]:
    if len(obstacles) == 0:
        return np.zeros((0, 2))
    return np.array([o.center_xy for o in obstacles], dtype=float)


def obstacle_penalty(p_xy: ArrayLike, obstacles: Sequence[Obstacle], w_obs: float,
                     sigma_obs: float) -> float:
    if sigma_obs <= 0:
        raise ValueError("sigma_obs must be positive")
    c = _centers(obstacles)
    d2 = np.sum((np.asarray(p_xy, dtype=float)[:2] - c) ** 2, axis=-1)
    return float(np.sum(w_obs * np.exp(-d2 / (2.0 * sigma_obs ** 2))))


def stage_cost(x: ArrayLike, u: ArrayLike, ref: ReferenceState, obstacles: Sequence[Obstacle],
               cfg: OcpConfig) -> float:
    x = np.asarray(getattr(x, "to_array", lambda: x)(), dtype=float)
    u = np.asarray(getattr(u, "u", u), dtype=float)
    e = x - ref.x_r
    return float(e @ (np.asarray(cfg.Q) * e) + u @ (np.asarray(cfg.R_w) * u)
                 + obstacle_penalty(x[:2], obstacles, cfg.w_obs, cfg.sigma_obs))


@dataclass
class InitialGuess:
    states: NDArray[np.float64]
    inputs: NDArray[np.float64]


@dataclass
class OcpSolution:
    states: NDArray[np.float64]   # (N+1, 13)
    inputs: NDArray[np.float64]   # (N, 4)
    cost: float
    kkt_residual: float
    iterations: int
    solve_time: float
    converged: bool = False
    max_defect: float = 0.0
    merit_history: list[tuple[float, float]] = field(default_factory=list)


class Ocp:
    """One transcribed OCP instance.

    The decision vector is ``z = [x(0), ..., x(N), u(0), ..., u(N-1)]``.
    Equality residuals are ``[x(0) - x0, x(k+1) - f_RK4(x(k), u(k), dt) for k < N]``.
    """

    def __init__(self, x0: ArrayLike, ref: ReferenceState, obstacles: Sequence[Obstacle],
                 cfg: OcpConfig, params: QuadParams):
        self.x0 = np.array(getattr(x0, "to_array", lambda: x0)(), dtype=float).reshape(NX)
        self.ref = ref
        self.obstacles = tuple(obstacles)
        self.cfg = cfg
        self.params = params
        self.N = cfg.N
        self.nz = (self.N + 1) * NX + self.N * NU
        self.u_lo, self.u_hi = cfg.input_bounds(params)
        self._centers = _centers(self.obstacles)
        self._sqrt_q = np.sqrt(np.asarray(cfg.Q))
        self._sqrt_r = np.sqrt(np.asarray(cfg.R_w))

    @property
    def lb(self) -> NDArray[np.float64]:
        return np.concatenate([np.full((self.N + 1) * NX, -np.inf), np.full(self.N * NU, self.u_lo)])

    @property
    def ub(self) -> NDArray[np.float64]:
        return np.concatenate([np.full((self.N + 1) * NX, np.inf), np.full(self.N * NU, self.u_hi)])

    def pack(self, states: ArrayLike, inputs: ArrayLike) -> NDArray[np.float64]:
        return np.concatenate([np.asarray(states, float).ravel(), np.asarray(inputs, float).ravel()])

    def unpack(self, z: ArrayLike) -> tuple[NDArray, NDArray]:
        z = np.asarray(z, dtype=float)
        nxs = (self.N + 1) * NX
        return z[:nxs].reshape(self.N + 1, NX), z[nxs:].reshape(self.N, NU)

    # -- residual model ---------------------------------------------------------------

    def stage_residuals(self, X: NDArray, U: NDArray) -> tuple[NDArray, NDArray, NDArray]:
        """Least-squares residuals of the stage cost at each node and their Jacobians.

        Returns r of shape (n, m), dr/dx of shape (n, m, 13) and dr/du of shape (n, m, 4),
        with m = 13 + 4 + n_obstacles.
        """
        n = X.shape[0]
        n_obs = len(self._centers)
        m = NX + NU + n_obs
        r = np.empty((n, m))
        rx = np.zeros((n, m, NX))
        ru = np.zeros((n, m, NU))
        r[:, :NX] = self._sqrt_q * (X - self.ref.x_r)
        rx[:, :NX, :] = np.diag(self._sqrt_q)
        r[:, NX:NX + NU] = self._sqrt_r * U
        ru[:, NX:NX + NU, :] = np.diag(self._sqrt_r)
        if n_obs:
            s2 = self.cfg.sigma_obs ** 2
            diff = X[:, None, :2] - self._centers[None, :, :]
            e = np.sqrt(self.cfg.w_obs) * np.exp(-np.sum(diff ** 2, axis=-1) / (4.0 * s2))
            r[:, NX + NU:] = e
            rx[:, NX + NU:, :2] = -(e / (2.0 * s2))[..., None] * diff
        return r, rx, ru

    def cost(self, z: ArrayLike) -> float:
        X, U = self.unpack(z)
        r, _, _ = self.stage_residuals(X[:-1], U)
        return float(np.sum(r * r))

    def cost_gradient(self, z: ArrayLike) -> NDArray[np.float64]:
        X, U = self.unpack(z)
        r, rx, ru = self.stage_residuals(X[:-1], U)
        gX = np.zeros_like(X)
        gX[:-1] = 2.0 * np.einsum("nm,nmi->ni", r, rx)
        gU = 2.0 * np.einsum("nm,nmi->ni", r, ru)
        return self.pack(gX, gU)

    def residuals(self, z: ArrayLike) -> NDArray[np.float64]:
        X, U = self.unpack(z)
        f = rk4_step(X[:-1], U, self.cfg.dt, self.params)
        return np.concatenate([X[0] - self.x0, (X[1:] - f).ravel()])

    def residual_jacobian(self, z: ArrayLike) -> NDArray[np.float64]:
        X, U = self.unpack(z)
        _, A, B = rk4_step_jacobians(X[:-1], U, self.cfg.dt, self.params)
        N = self.N
        jac = np.zeros(((N + 1) * NX, self.nz))
        jac[:NX, :NX] = np.eye(NX)
        u0 = (N + 1) * NX
        for k in range(N):
            rows = slice((k + 1) * NX, (k + 2) * NX)
            jac[rows, (k + 1) * NX:(k + 2) * NX] = np.eye(NX)
            jac[rows, k * NX:(k + 1) * NX] = -A[k]
            jac[rows, u0 + k * NU:u0 + (k + 1) * NU] = -B[k]
        return jac

    def initial_guess(self) -> InitialGuess:
        """Hover-thrust inputs with the states rolled out from x0 (a feasible point)."""
        u = np.clip(self.params.hover_thrust, self.u_lo, self.u_hi)
        U = np.full((self.N, NU), u)
        X = np.empty((self.N + 1, NX))
        X[0] = self.x0
        for k in range(self.N):
            X[k + 1] = rk4_step(X[k], U[k], self.cfg.dt, self.params)
        return InitialGuess(X, U)


def transcribe(x0: ArrayLike, ref: ReferenceState, obstacles: Sequence[Obstacle], cfg: OcpConfig,
               params: QuadParams) -> Ocp:
    return Ocp(x0, ref, obstacles, cfg, params)


def warm_start_shift(prev: OcpSolution | InitialGuess) -> InitialGuess:
    """Shift states and inputs one stage forward, duplicating the last stage."""
    X = np.concatenate([prev.states[1:], prev.states[-1:]], axis=0)
    U = np.concatenate([prev.inputs[1:], prev.inputs[-1:]], axis=0)
    return InitialGuess(X, U)


def _condense(A: NDArray, B: NDArray, defects: NDArray) -> tuple[NDArray, NDArray]:
    """Node state increments as an affine map of the stacked input increments.

    dX_k = G[k] @ dU + h[k], with dX_0 = 0 since x(0) is pinned to x0.
    """
    N = A.shape[0]
    G = np.zeros((N + 1, NX, N * NU))
    h = np.zeros((N + 1, NX))
    for k in range(N):
        G[k + 1] = A[k] @ G[k]
        G[k + 1, :, k * NU:(k + 1) * NU] += B[k]
        h[k + 1] = A[k] @ h[k] + defects[k]
    return G, h


def solve(ocp: Ocp, warm_start: OcpSolution | InitialGuess | None = None, *,
          max_iters: int | None = None) -> OcpSolution:
    """Gauss-Newton SQP on the multiple-shooting transcription.

    Args:
        ocp: transcribed problem.
        warm_start: initial guess for all node states and inputs. The first node
            is always reset to ``ocp.x0`` and inputs are projected onto the bounds.
        max_iters: overrides ``ocp.cfg.max_sqp_iters``.

    Raises:
        SolverFailure: non-finite iterate or failed QP subproblem.
    """
    t_start = time.perf_counter()
    cfg, params = ocp.cfg, ocp.params
    iters_allowed = cfg.max_sqp_iters if max_iters is None else max_iters
    guess = warm_start if warm_start is not None else ocp.initial_guess()
    X = np.array(guess.states, dtype=float)
    U = np.clip(np.array(guess.inputs, dtype=float), ocp.u_lo, ocp.u_hi)
    if X.shape != (ocp.N + 1, NX) or U.shape != (ocp.N, NU):
        raise ValueError("warm start does not match the horizon length")
    X[0] = ocp.x0
    N = ocp.N
    lo, hi = ocp.u_lo, ocp.u_hi

    mu = 0.0
    history: list[tuple[float, float]] = []
    iterations = 0
    converged = False

    def snapshot(cost, kkt, max_def):
        return OcpSolution(X.copy(), U.copy(), cost, kkt, iterations,
                           time.perf_counter() - t_start, converged, max_def, history)

    def merit_terms(Xt, Ut):
        r, _, _ = ocp.stage_residuals(Xt[:-1], Ut)
        c = rk4_step(Xt[:-1], Ut, cfg.dt, params) - Xt[1:]
        return float(np.sum(r * r)), float(np.sum(np.abs(c)))

    while True:
        f, A, B = rk4_step_jacobians(X[:-1], U, cfg.dt, params)
        defects = f - X[1:]
        r, rx, ru = ocp.stage_residuals(X[:-1], U)
        cost = float(np.sum(r * r))
        if not (np.isfinite(cost) and np.all(np.isfinite(defects))):
            raise SolverFailure("non-finite cost or defect", snapshot(cost, np.inf, np.inf))

        G, h = _condense(A, B, defects)
        # rows of the condensed least-squares problem, one block per stage
        M = np.einsum("kmi,kij->kmj", rx, G[:-1])
        for k in range(N):
            M[k, :, k * NU:(k + 1) * NU] += ru[k]
        b = r + np.einsum("kmi,ki->km", rx, h[:-1])
        M = M.reshape(-1, N * NU)

        grad = 2.0 * (M.T @ r.ravel())
        u_flat = U.ravel()
        pg = u_flat - np.clip(u_flat - grad, lo, hi)
        max_def = float(np.max(np.abs(defects)))
        kkt = max(max_def, float(np.max(np.abs(pg))))
        if kkt < cfg.kkt_tol:
            converged = True
            return snapshot(cost, kkt, max_def)
        if iterations >= iters_allowed:
            return snapshot(cost, kkt, max_def)

        lam = np.sqrt(cfg.levenberg) * np.eye(N * NU)
        try:
            qp = lsq_linear(np.vstack([M, lam]), -np.concatenate([b.ravel(), np.zeros(N * NU)]),
                            bounds=(lo - u_flat, hi - u_flat), method="bvls")
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SolverFailure(f"QP subproblem failed: {exc}", snapshot(cost, kkt, max_def)) from exc
        dU = qp.x.reshape(N, NU)
        dX = np.einsum("kij,j->ki", G, qp.x) + h
        if not (np.all(np.isfinite(dU)) and np.all(np.isfinite(dX))):
            raise SolverFailure("non-finite QP step", snapshot(cost, kkt, max_def))

        lin = np.einsum("kmi,ki->km", rx, dX[:-1]) + np.einsum("kmi,ki->km", ru, dU)
        dcost = 2.0 * float(np.sum(r * lin))
        c1 = float(np.sum(np.abs(defects)))
        if c1 > 0 and dcost > 0:
            mu = max(mu, 2.0 * dcost / c1 + 1e-8)
        dmerit = dcost - mu * c1
        phi0 = cost + mu * c1
        if dmerit >= 0:
            return snapshot(cost, kkt, max_def)

        alpha = 1.0
        accepted = False
        for _ in range(30):
            Xt = X + alpha * dX
            Ut = np.clip(U + alpha * dU, lo, hi)
            ct, vt = merit_terms(Xt, Ut)
            phi = ct + mu * vt
            if np.isfinite(phi) and phi <= phi0 + 1e-4 * alpha * dmerit:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return snapshot(cost, kkt, max_def)
        history.append((phi0, phi))
        X, U = Xt, Ut
        X[0] = ocp.x0
        iterations += 1


def predicted_rollout(x0: ArrayLike, inputs: ArrayLike, dt: float, params: QuadParams) -> NDArray:
    """Open-loop RK4 rollout of an input sequence."""
    inputs = np.asarray(inputs, dtype=float)
    X = np.empty((len(inputs) + 1, NX))
    X[0] = x0
    for k, u in enumerate(inputs):
        X[k + 1] = rk4_step(X[k], u, dt, params)
    return X


class NmpcController:
    """Receding-horizon wrapper that keeps the previous solution for warm starts.

    Not thread-safe: one instance per control loop.
    """

    def __init__(self, cfg: OcpConfig, params: QuadParams):
        self.cfg = cfg
        self.params = params
        self.previous: OcpSolution | None = None

    def reset(self) -> None:
        self.previous = None

    def step(self, x0: ArrayLike, ref: ReferenceState, obstacles: Sequence[Obstacle]) -> OcpSolution:
        ocp = transcribe(x0, ref, obstacles, self.cfg, self.params)
        guess = warm_start_shift(self.previous) if self.previous is not None else None
        sol = solve(ocp, guess)
        self.previous = sol
        return sol


def with_overrides(cfg: OcpConfig, **kw) -> OcpConfig:
    return replace(cfg, **kw)
