import numpy as np
import pytest
from scipy.optimize import minimize

from vlrr.dynamics import QuadParams, hover_command, hover_state, rk4_step
from vlrr.nmpc import (
    InitialGuess,
    NmpcController,
    Obstacle,
    OcpConfig,
    ReferenceState,
    SolverFailure,
    obstacle_penalty,
    predicted_rollout,
    solve,
    stage_cost,
    transcribe,
    warm_start_shift,
)

PARAMS = QuadParams()


def random_instance(rng, N):
    cfg = OcpConfig(N=N, dt=0.05)
    x0 = hover_state(rng.uniform(-1, 1, 3) + [0, 0, 1.2])
    x0[3:6] = rng.normal(scale=0.5, size=3)
    x0[10:13] = rng.normal(scale=0.3, size=3)
    obstacles = [Obstacle(rng.uniform(-1, 1, 2)) for _ in range(rng.integers(0, 3))]
    ocp = transcribe(x0, ReferenceState.at(rng.uniform(-1, 1, 3) + [0, 0, 1.2]), obstacles, cfg, PARAMS)
    X = np.array([hover_state(rng.normal(size=3)) for _ in range(N + 1)])
    X[:, 3:6] = rng.normal(size=(N + 1, 3))
    q = rng.normal(size=(N + 1, 4))
    X[:, 6:10] = q / np.linalg.norm(q, axis=1, keepdims=True)
    X[:, 10:13] = rng.normal(scale=0.5, size=(N + 1, 3))
    U = rng.uniform(0, PARAMS.u_max, (N, 4))
    return ocp, ocp.pack(X, U)


def gd_oracle_cost(ocp):
    """Single-shooting oracle over inputs only, with finite-difference gradients.

    Independent of the SQP code path: it rolls out the dynamics, evaluates the
    plain stage_cost and minimizes with projected quasi-Newton (L-BFGS-B).
    """
    N = ocp.N

    def J(u_flat):
        U = u_flat.reshape(N, 4)
        X = predicted_rollout(ocp.x0, U, ocp.cfg.dt, ocp.params)
        return sum(stage_cost(X[k], U[k], ocp.ref, ocp.obstacles, ocp.cfg) for k in range(N))

    u0 = np.full(N * 4, ocp.params.hover_thrust)
    res = minimize(J, u0, method="L-BFGS-B", bounds=[(ocp.u_lo, ocp.u_hi)] * (N * 4),
                   options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 5000})
    return res.fun


# -- cost terms --------------------------------------------------------------------------

def test_obstacle_penalty_examples():
    assert obstacle_penalty((0, 0), [Obstacle((0, 0))], 400, 0.25) == pytest.approx(400)
    assert obstacle_penalty((0.25, 0), [Obstacle((0, 0))], 400, 0.25) == pytest.approx(400 * np.exp(-0.5))
    assert obstacle_penalty((0.5, 0), [Obstacle((0, 0))], 400, 0.25) == pytest.approx(400 * np.exp(-2.0))
    assert obstacle_penalty((0, 0), [], 400, 0.25) == 0.0


def test_obstacle_penalty_decreases_with_distance():
    obs = [Obstacle((0.3, -0.2))]
    vals = [obstacle_penalty((0.3 + d, -0.2), obs, 400, 0.25) for d in np.linspace(0, 2, 50)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_stage_cost_at_reference_is_input_penalty_only():
    cfg = OcpConfig()
    ref = ReferenceState.at((1, 2, 1.2))
    u = hover_command(PARAMS).u
    assert stage_cost(ref.x_r, u, ref, [], cfg) == pytest.approx(0.1 * 4 * 2.4525 ** 2)
    x = ref.x_r.copy()
    x[0] += 1.0
    assert stage_cost(x, np.zeros(4), ref, [], cfg) == pytest.approx(10.0)


def test_config_validation():
    with pytest.raises(ValueError):
        OcpConfig(N=0)
    with pytest.raises(ValueError):
        OcpConfig(sigma_obs=0.0)
    with pytest.raises(ValueError):
        OcpConfig.from_dict({"horizon": 5})
    assert OcpConfig.from_dict(OcpConfig(N=7).to_dict()) == OcpConfig(N=7)


def test_reference_state_requires_hover_shape():
    x = hover_state((0, 0, 1))
    x[3] = 1.0
    with pytest.raises(ValueError):
        ReferenceState(x)


# -- transcription -----------------------------------------------------------------------

def test_transcription_sizes_and_bounds():
    ocp = transcribe(hover_state((0, 0, 1)), ReferenceState.at((1, 0, 1)), [], OcpConfig(N=2), PARAMS)
    assert ocp.nz == 47
    assert np.all(np.isinf(ocp.lb[:39])) and np.all(ocp.lb[39:] == 0.0)
    assert np.all(ocp.ub[39:] == PARAMS.u_max)
    X, U = ocp.unpack(np.arange(47.0))
    np.testing.assert_array_equal(ocp.pack(X, U), np.arange(47.0))


def test_hover_is_feasible_and_cost_matches_stage_sum():
    cfg = OcpConfig(N=5)
    x0 = hover_state((0.2, 0.1, 1.2))
    ref = ReferenceState.at((1, 0, 1.2))
    obs = [Obstacle((0.5, 0.1))]
    ocp = transcribe(x0, ref, obs, cfg, PARAMS)
    g = ocp.initial_guess()
    z = ocp.pack(g.states, g.inputs)
    np.testing.assert_allclose(ocp.residuals(z), 0.0, atol=1e-12)
    expected = sum(stage_cost(g.states[k], g.inputs[k], ref, obs, cfg) for k in range(cfg.N))
    assert ocp.cost(z) == pytest.approx(expected, rel=1e-12)


def fd_check(ocp, z, h=1e-6):
    g = ocp.cost_gradient(z)
    Jc = ocp.residual_jacobian(z)
    g_fd = np.empty_like(z)
    J_fd = np.empty_like(Jc)
    for i in range(len(z)):
        e = np.zeros_like(z)
        e[i] = h
        g_fd[i] = (ocp.cost(z + e) - ocp.cost(z - e)) / (2 * h)
        J_fd[:, i] = (ocp.residuals(z + e) - ocp.residuals(z - e)) / (2 * h)
    rel_g = np.max(np.abs(g - g_fd)) / max(1.0, np.max(np.abs(g_fd)))
    rel_J = np.max(np.abs(Jc - J_fd)) / max(1.0, np.max(np.abs(J_fd)))
    return rel_g, rel_J


def test_gradient_and_jacobian_match_finite_differences():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        ocp, z = random_instance(rng, int(rng.integers(2, 6)))
        rel_g, rel_J = fd_check(ocp, z)
        assert rel_g <= 1e-4 and rel_J <= 1e-4


# -- solver ------------------------------------------------------------------------------

def test_hover_is_already_optimal_without_input_weight():
    cfg = OcpConfig(N=10, R_w=(0.0,) * 4, kkt_tol=1e-8)
    x0 = hover_state((0.3, -0.4, 1.2))
    sol = solve(transcribe(x0, ReferenceState(x0), [], cfg, PARAMS), max_iters=5)
    assert sol.iterations <= 2 and sol.converged
    np.testing.assert_allclose(sol.inputs, PARAMS.hover_thrust, atol=1e-6)
    assert sol.cost == pytest.approx(0.0, abs=1e-12)
    blocked = solve(transcribe(x0, ReferenceState(x0), [Obstacle((0.3, -0.3))], cfg, PARAMS), max_iters=5)
    assert blocked.cost > 0.0


def test_n2_solve_matches_independent_oracle():
    cfg = OcpConfig(N=2, kkt_tol=1e-9)
    ocp = transcribe(hover_state((0, 0, 1.2)), ReferenceState.at((1, 0, 1.2)), [], cfg, PARAMS)
    sol = solve(ocp, max_iters=200)
    assert sol.converged
    oracle = gd_oracle_cost(ocp)
    assert abs(sol.cost - oracle) / abs(oracle) <= 1e-4
    # frozen from the oracle run
    assert sol.cost == pytest.approx(20.219960410733776, rel=1e-6)


def test_n2_with_obstacle_matches_oracle():
    cfg = OcpConfig(N=2, kkt_tol=1e-9)
    ocp = transcribe(hover_state((0, 0, 1.2)), ReferenceState.at((0.8, 0.3, 1.0)),
                     [Obstacle((0.1, 0.05))], cfg, PARAMS)
    sol = solve(ocp, max_iters=200)
    oracle = gd_oracle_cost(ocp)
    assert abs(sol.cost - oracle) / abs(oracle) <= 1e-4


def test_converged_solution_is_dynamically_consistent():
    cfg = OcpConfig(N=10, kkt_tol=1e-7)
    ocp = transcribe(hover_state((0, 0, 1.2)), ReferenceState.at((1.5, -0.5, 1.2)),
                     [Obstacle((0.7, -0.2))], cfg, PARAMS)
    sol = solve(ocp, max_iters=300)
    assert sol.converged
    assert np.max(np.abs(ocp.residuals(ocp.pack(sol.states, sol.inputs)))) <= 1e-6
    rollout = predicted_rollout(sol.states[0], sol.inputs, cfg.dt, PARAMS)
    np.testing.assert_allclose(rollout, sol.states, atol=1e-6)


def test_bounds_respected_and_merit_monotone():
    params = QuadParams(u_max=3.0)
    cfg = OcpConfig(N=15, kkt_tol=1e-6)
    ocp = transcribe(hover_state((0, 0, 1.2)), ReferenceState.at((2, 1, 2.0)), [], cfg, params)
    sol = solve(ocp, max_iters=100)
    assert np.all(sol.inputs >= 0.0) and np.all(sol.inputs <= 3.0)
    assert np.any(sol.inputs == 3.0)
    assert sol.cost >= 0.0
    assert all(after <= before for before, after in sol.merit_history)


def test_infeasible_warm_start_still_converges():
    cfg = OcpConfig(N=8, kkt_tol=1e-7)
    ocp = transcribe(hover_state((0, 0, 1.2)), ReferenceState.at((1, 0, 1.2)), [], cfg, PARAMS)
    rng = np.random.default_rng(5)
    g = ocp.initial_guess()
    bad = InitialGuess(g.states + rng.normal(scale=0.05, size=g.states.shape), g.inputs)
    sol = solve(ocp, bad, max_iters=200)
    assert sol.converged and sol.max_defect <= 1e-6


def test_solver_failure_on_non_finite_warm_start():
    ocp = transcribe(hover_state((0, 0, 1.2)), ReferenceState.at((1, 0, 1.2)), [], OcpConfig(N=3),
                     PARAMS)
    g = ocp.initial_guess()
    g.states[2, 0] = np.nan
    with pytest.raises(SolverFailure) as info:
        solve(ocp, g)
    assert info.value.last_iterate is not None


def test_warm_start_shift_examples():
    X = np.array([[1.0] * 13, [2.0] * 13, [3.0] * 13])
    U = np.array([[10.0] * 4, [20.0] * 4])
    g = warm_start_shift(InitialGuess(X, U))
    np.testing.assert_array_equal(g.states[:, 0], [2, 3, 3])
    np.testing.assert_array_equal(g.inputs[:, 0], [20, 20])
    h = np.tile(hover_state((0, 0, 1)), (4, 1))
    hu = np.tile(hover_command(PARAMS).u, (3, 1))
    g = warm_start_shift(InitialGuess(h, hu))
    np.testing.assert_array_equal(g.states, h)
    np.testing.assert_array_equal(g.inputs, hu)


def test_warm_start_needs_fewer_iterations():
    cfg = OcpConfig(kkt_tol=1e-6, max_sqp_iters=100)
    warm, cold = NmpcController(cfg, PARAMS), NmpcController(cfg, PARAMS)
    x = hover_state((0, 0, 1.2))
    n_warm = n_cold = 0
    for k in range(30):
        ref = ReferenceState.at((1 + 0.05 * k, 0.5, 1.2))
        sw = warm.step(x, ref, [])
        cold.reset()
        sc = cold.step(x, ref, [])
        n_warm += sw.iterations
        n_cold += sc.iterations
        x = rk4_step(x, sw.inputs[0], cfg.dt, PARAMS)
    assert n_warm < n_cold


def min_predicted_distance(w_obs):
    cfg = OcpConfig(w_obs=w_obs, kkt_tol=1e-6)
    obs = (0.6, 0.08)
    ocp = transcribe(hover_state((0, 0, 1.2)), ReferenceState.at((2, 0, 1.2)), [Obstacle(obs)], cfg, PARAMS)
    sol = solve(ocp, max_iters=300)
    return float(np.min(np.hypot(sol.states[:, 0] - obs[0], sol.states[:, 1] - obs[1])))


@pytest.mark.slow
def test_obstacle_weight_ladder_is_monotone():
    d = [min_predicted_distance(w) for w in (0, 25, 100, 200, 400, 800, 1600)]
    assert all(b >= a - 1e-6 for a, b in zip(d, d[1:]))
    assert d[0] < 0.25 <= d[4]


def test_obstacle_pushes_closed_loop_path_away():
    cfg = OcpConfig()
    obs = [Obstacle((1.0, 0.05))]

    def fly(obstacles):
        ctrl = NmpcController(cfg, PARAMS)
        x = hover_state((0, 0, 1.2))
        dmin = np.inf
        for _ in range(60):
            sol = ctrl.step(x, ReferenceState.at((2, 0, 1.2)), obstacles)
            x = rk4_step(x, sol.inputs[0], cfg.dt, PARAMS)
            dmin = min(dmin, np.hypot(x[0] - 1.0, x[1] - 0.05))
        return dmin

    assert fly(obs) >= 0.25 > fly([])
