import dataclasses
import math

import numpy as np
import pytest

from periodic_lmpc.controller import (CandidateTrajectory, FtocpIndexing,
                                      build_ftocp, candidate_shift,
                                      initial_candidate, plan_cost,
                                      solve_lmpc_linear, solve_lmpc_nonlinear)
from periodic_lmpc.model import eval_stage_cost
from periodic_lmpc.qp import SOLVED, QpSettings
from periodic_lmpc.safe_set import TerminalData, TrajectoryStore
from periodic_lmpc.scenarios import builtin, make_seed

from conftest import small_double_integrator_spec


def replay_seed(cfg, extra_inputs=None):
    """Store holding the seed replay plus optional extra closed-loop inputs."""
    spec = cfg.spec
    seed = make_seed(cfg)
    store = TrajectoryStore(seed.states[0], period=spec.period, dynamics=spec.dynamics)
    for t in range(spec.period):
        x = store.states[t]
        u = seed.inputs[t]
        store.record_step(t, spec.step(t, x, u), u, spec.stage_cost(t, x, u))
    if extra_inputs is not None:
        for k, u in enumerate(extra_inputs):
            t = spec.period + k
            x = store.states[t]
            u = np.atleast_1d(u)
            store.record_step(t, spec.step(t, x, u), u, spec.stage_cost(t, x, u))
    return store, seed


def test_variable_count_matches_stacking():
    idx = FtocpIndexing(n=2, d=1, N=25, M=3)
    assert idx.num_vars == 80


def test_terminal_rows_hold_for_unit_multipliers(s1):
    store, _ = replay_seed(s1)
    spec = s1.spec
    t = spec.period
    td = store.terminal_data(t, t + spec.horizon)
    prob, idx = build_ftocp(spec, td, t, store.states[t])
    for j in range(td.num_vertices):
        z = np.zeros(idx.num_vars)
        z[idx.x_slice(spec.horizon)] = td.vertices[:, j]
        lam = np.zeros(td.num_vertices)
        lam[j] = 1.0
        z[idx.lam_slice] = lam
        rows = prob.A @ z
        # terminal equality block sits right after init and dynamics rows
        base = (spec.horizon + 1) * spec.state_dim
        assert np.allclose(rows[base:base + spec.state_dim], 0.0, atol=1e-12)
        assert rows[base + spec.state_dim] == pytest.approx(1.0)


def candidate_residuals(prob, idx, cand):
    z = idx.pack(cand.states, cand.inputs, cand.multipliers)
    Az = prob.A @ z
    return float(np.max(np.maximum(Az - prob.u, 0.0) + np.maximum(prob.l - Az, 0.0)))


def test_seed_candidate_feasible_for_first_qp(s1):
    store, _ = replay_seed(s1)
    spec = s1.spec
    t = spec.period
    cand = initial_candidate(spec, store, t)
    td = store.terminal_data(t, t + spec.horizon)
    prob, idx = build_ftocp(spec, td, t, store.states[t])
    assert candidate_residuals(prob, idx, cand) <= 1e-8


def test_steady_state_seed_is_already_optimal():
    spec = small_double_integrator_spec(period=6, horizon=2, x_ref=(0.0, 0.0))
    store = TrajectoryStore(np.zeros(2), period=6, dynamics=spec.dynamics)
    for t in range(6):
        store.record_step(t, np.zeros(2), np.zeros(1), 0.0)
    sol = solve_lmpc_linear(spec, store, 6, np.zeros(2))
    assert sol.status == SOLVED
    assert abs(sol.action[0]) <= 1e-8
    assert sol.cost == pytest.approx(0.0, abs=1e-8)


def test_first_solve_beats_seed_candidate(s1):
    store, _ = replay_seed(s1)
    spec = s1.spec
    t = spec.period
    cand = initial_candidate(spec, store, t)
    td = store.terminal_data(t, t + spec.horizon)
    cand_cost = plan_cost(spec, td, t, cand.states, cand.inputs, cand.multipliers)
    sol = solve_lmpc_linear(spec, store, t, store.states[t], warm=cand)
    assert sol.status == SOLVED
    assert sol.cost <= cand_cost + 1e-6
    # the seed holds the origin, so its open-loop cost is exactly P times 0.04
    assert cand_cost == pytest.approx(4.0, abs=1e-9)


def test_linear_solve_matches_input_grid_search():
    spec = small_double_integrator_spec(period=6, horizon=2, p_bound=2.0,
                                        u_bound=0.8, x_ref=(0.3, 0.0))
    # input patterns that steer the double integrator back to the origin
    # every cycle; mixing two of them makes the safe-set vertices span a 2-D
    # hull that stays reachable from every intermediate state
    pa = np.array([1.0, -1.0, 0.0, -1.0, 1.0, 0.0])
    pb = np.array([1.0, 0.0, 0.0, -1.0, -3.0, 3.0])
    mixes = [(0.2, 0.0), (0.25, 0.05), (0.2, -0.05), (0.22, 0.0)]
    store = TrajectoryStore(np.zeros(2), period=6, dynamics=spec.dynamics)
    t = 3 * spec.period + 1
    for tick in range(t):
        a, b = mixes[tick // 6]
        u = np.array([a * pa[tick % 6] + b * pb[tick % 6]])
        x = store.states[tick]
        store.record_step(tick, spec.step(tick, x, u), u, spec.stage_cost(tick, x, u))
    assert np.allclose(store.states[18], 0.0, atol=1e-12)
    td = store.terminal_data(t, t + 2)
    assert td.num_vertices == 3
    sol = solve_lmpc_linear(spec, store, t, store.states[t])
    assert sol.status == SOLVED

    # exhaustive search over both inputs on a 1e-3 grid
    A, B, _ = spec.dynamics.affine_at(0)
    x0 = store.states[t]
    grid = np.linspace(-0.8, 0.8, 1601)
    u0 = grid[:, None]
    u1 = grid[None, :]
    x1 = (A @ x0)[:, None, None] + B[:, 0][:, None, None] * u0[None, :, :]
    x2 = np.einsum("ij,jkl->ikl", A, x1) + B[:, 0][:, None, None] * u1[None, :, :]
    v = td.vertices
    T = np.column_stack([v[:, 0] - v[:, 2], v[:, 1] - v[:, 2]])
    Tinv = np.linalg.inv(T)
    rhs = x2 - v[:, 2][:, None, None]
    lam01 = np.einsum("ij,jkl->ikl", Tinv, rhs)
    lam2 = 1.0 - lam01.sum(axis=0)
    lam_full = np.concatenate([lam01, lam2[None, :, :]], axis=0)
    inside = np.all(lam_full >= -1e-9, axis=0)
    terminal = np.einsum("m,mkl->kl", td.costs, lam_full)
    stage0 = (x0[0] - 0.3) ** 2 + u0 ** 2
    stage1 = (x1[0] - 0.3) ** 2 + u1 ** 2
    total = stage0 + stage1 + terminal
    total[~inside] = np.inf
    assert np.isfinite(total).any()
    assert sol.cost == pytest.approx(float(total.min()), abs=1e-3)


def test_nonlinear_path_matches_linear_on_ltv_system(s1):
    store, _ = replay_seed(s1)
    spec = s1.spec
    t = spec.period
    cand = initial_candidate(spec, store, t)
    lin = solve_lmpc_linear(spec, store, t, store.states[t], warm=cand)
    nl = solve_lmpc_nonlinear(spec, store, t, store.states[t], warm=cand)
    assert nl.status == SOLVED
    assert nl.cost == pytest.approx(lin.cost, abs=1e-6)
    assert np.max(np.abs(nl.inputs - lin.inputs)) <= 1e-5


def test_s4_first_action_respects_position_floor(s4):
    store, _ = replay_seed(s4)
    spec = s4.spec
    t = spec.period
    cand = initial_candidate(spec, store, t)
    sol = solve_lmpc_nonlinear(spec, store, t, store.states[t], warm=cand)
    assert sol.status == SOLVED
    x_next = spec.step(t, store.states[t], sol.action)
    assert x_next[0] >= 0.5 - 1e-6
    assert np.all(np.abs(sol.inputs) <= 5.0 + 1e-6)


def test_s4_reduced_horizon_matches_direct_search(s4):
    """Dense search over the two free inputs; the terminal equality pins the
    last two in closed form thanks to the triangular structure of the map."""
    spec = dataclasses.replace(s4.spec, horizon=4)
    cfg = dataclasses.replace(s4, spec=spec)
    store, _ = replay_seed(cfg)
    P = spec.period
    t = P
    cand = initial_candidate(spec, store, t)
    sol = solve_lmpc_nonlinear(spec, store, t, store.states[t], warm=cand)
    assert sol.status == SOLVED

    td = store.terminal_data(t, t + 4)
    assert td.num_vertices == 1
    ret = float(td.costs[0])
    s = [5.0 * math.sin(2.0 * math.pi * k / P) for k in range(4)]
    p0, q0 = store.states[t]
    grid = np.linspace(-5.0, 5.0, 401)
    u0 = grid[:, None]
    u1 = grid[None, :]
    p1 = p0 + 0.1 * q0
    q1 = q0 + 0.1 * p0 * (s[0] + u0)
    p2 = p1 + 0.1 * q1
    q2 = q1 + 0.1 * p1 * (s[1] + u1)
    p3 = p2 + 0.1 * q2
    # u2 from the position wrap requirement, u3 from the velocity one
    u2 = (1.0 - p3 - 0.1 * q2 - 0.01 * p2 * s[2]) / (0.01 * p2)
    q3 = q2 + 0.1 * p2 * (s[2] + u2)
    u3 = -q3 / (0.1 * p3) - s[3]
    p1g = np.broadcast_to(np.atleast_2d(p1), u2.shape)
    cost = ((p0 - 2.0) ** 2 + (p1g - 2.0) ** 2 + (p2 - 2.0) ** 2 + (p3 - 2.0) ** 2) + ret
    ok = ((np.abs(u2) <= 5.0) & (np.abs(u3) <= 5.0)
          & (p1g >= 0.5) & (p2 >= 0.5) & (p3 >= 0.5))
    cost = np.where(ok, cost, np.inf)
    best = float(cost.min())
    assert np.isfinite(best)
    assert abs(sol.cost - best) <= 0.02 * best


def test_candidate_shift_is_feasible_next_tick(s1):
    spec = s1.spec
    store, _ = replay_seed(s1)
    t = spec.period
    x = store.states[t]
    sol = solve_lmpc_linear(spec, store, t, x, warm=initial_candidate(spec, store, t))
    u = sol.action
    store.record_step(t, spec.step(t, x, u), u, spec.stage_cost(t, x, u))
    cand = candidate_shift(sol, spec, store, t + 1)
    td = store.terminal_data(t + 1, t + 1 + spec.horizon)
    prob, idx = build_ftocp(spec, td, t + 1, store.states[t + 1])
    assert cand.valid
    assert candidate_residuals(prob, idx, cand) <= 1e-8


def test_candidate_shift_singleton_appends_recorded_state():
    spec = small_double_integrator_spec(period=6, horizon=2, x_ref=(0.1, 0.0))
    pa = np.array([1.0, -1.0, 0.0, -1.0, 1.0, 0.0])  # returns to the origin each cycle
    store = TrajectoryStore(np.zeros(2), period=6, dynamics=spec.dynamics)
    for tick in range(6):
        u = np.array([0.2 * pa[tick]])
        x = store.states[tick]
        store.record_step(tick, spec.step(tick, x, u), u, spec.stage_cost(tick, x, u))
    t = 6
    sol = solve_lmpc_linear(spec, store, t, store.states[t])
    u = sol.action
    store.record_step(t, spec.step(t, store.states[t], u), u,
                      spec.stage_cost(t, store.states[t], u))
    cand = candidate_shift(sol, spec, store, t + 1)
    # slot (t+1)+N = 9; its only recorded ancestor is time 3
    assert np.allclose(cand.states[-1], store.states[3], atol=1e-12)


def test_s4_input_weight_rule(s4):
    rule = s4.spec.dynamics.input_weight_rule
    lam = np.array([0.5, 0.5])
    X = np.array([[1.0, 2.0], [0.3, -0.4]])
    U = np.array([[0.7, -1.1]])
    gamma = rule(lam, X, U)
    assert gamma == pytest.approx([1.0 / 3.0, 2.0 / 3.0])
    assert np.sum(gamma) == pytest.approx(1.0)
    # the mixed transition reproduces the mixture of transitions
    tau = 5
    mixed = s4.spec.dynamics.step(tau, X @ lam, U @ gamma)
    parts = lam[0] * s4.spec.dynamics.step(tau, X[:, 0], U[:, 0]) \
        + lam[1] * s4.spec.dynamics.step(tau, X[:, 1], U[:, 1])
    assert np.max(np.abs(mixed - parts)) <= 1e-12


def test_fallback_uses_candidate_action(s1):
    spec = s1.spec
    store, _ = replay_seed(s1)
    t = spec.period
    cand = initial_candidate(spec, store, t)
    crippled = QpSettings(max_iter=1, check_interval=1, polish=False)
    sol = solve_lmpc_linear(spec, store, t, store.states[t], warm=cand, settings=crippled)
    assert sol.fallback
    assert np.array_equal(sol.action, cand.inputs[0])
    assert sol.cost == pytest.approx(
        plan_cost(spec, store.terminal_data(t, t + spec.horizon), t,
                  cand.states, cand.inputs, cand.multipliers))


def test_fallback_without_candidate_raises(s1):
    from periodic_lmpc.controller import ControllerError
    spec = s1.spec
    store, _ = replay_seed(s1)
    crippled = QpSettings(max_iter=1, check_interval=1, polish=False)
    with pytest.raises(ControllerError):
        solve_lmpc_linear(spec, store, spec.period, store.states[spec.period],
                          warm=None, settings=crippled)


def test_policy_periodic_equivariance():
    # identical vertex data one period later must produce the identical QP
    spec = small_double_integrator_spec(period=6, horizon=2, u_bound=0.8,
                                        x_ref=(0.3, 0.0))
    pa = np.array([1.0, -1.0, 0.0, -1.0, 1.0, 0.0])
    pb = np.array([1.0, 0.0, 0.0, -1.0, -3.0, 3.0])
    mixes = [(0.2, 0.0), (0.25, 0.05), (0.2, -0.05), (0.22, 0.0)]
    store = TrajectoryStore(np.zeros(2), period=6, dynamics=spec.dynamics)
    t = 3 * spec.period + 1
    for tick in range(t):
        a, b = mixes[tick // 6]
        u = np.array([a * pa[tick % 6] + b * pb[tick % 6]])
        x = store.states[tick]
        store.record_step(tick, spec.step(tick, x, u), u, spec.stage_cost(tick, x, u))
    td = store.terminal_data(t, t + spec.horizon)
    shifted = TerminalData(slot=td.slot + spec.period, vertices=td.vertices,
                           costs=td.costs,
                           vertex_times=[i + spec.period for i in td.vertex_times],
                           period=spec.period)
    x_t = store.states[t]
    prob_a, _ = build_ftocp(spec, td, t, x_t)
    prob_b, _ = build_ftocp(spec, shifted, t + spec.period, x_t)
    assert np.array_equal(prob_a.H.toarray(), prob_b.H.toarray())
    assert np.array_equal(prob_a.q, prob_b.q)
    assert np.array_equal(prob_a.A.toarray(), prob_b.A.toarray())
    assert np.array_equal(prob_a.l, prob_b.l)
    assert np.array_equal(prob_a.u, prob_b.u)


def test_terminal_membership_and_candidate_dominance(s1):
    spec = s1.spec
    store, _ = replay_seed(s1)
    cand = initial_candidate(spec, store, spec.period)
    prev_cost = None
    for t in range(spec.period, spec.period + 4):
        x = store.states[t]
        td = store.terminal_data(t, t + spec.horizon)
        cand_cost = plan_cost(spec, td, t, cand.states, cand.inputs, cand.multipliers)
        sol = solve_lmpc_linear(spec, store, t, x, warm=cand)
        # optimality against the feasible shifted candidate
        assert sol.cost <= cand_cost + 1e-6
        if prev_cost is not None:
            assert sol.cost <= prev_cost + 1e-6
        # terminal state reproduces the vertex combination
        terminal_gap = np.max(np.abs(sol.states[-1] - td.vertices @ sol.multipliers))
        assert terminal_gap <= 1e-7
        assert abs(np.sum(sol.multipliers) - 1.0) <= 1e-7
        u = sol.action
        store.record_step(t, spec.step(t, x, u), u, spec.stage_cost(t, x, u))
        cand = candidate_shift(sol, spec, store, t + 1)
        prev_cost = sol.cost
