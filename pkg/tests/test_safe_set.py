import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from periodic_lmpc.model import LtvDynamics
from periodic_lmpc.safe_set import (EmptySafeSetError, SafeSetQueryError,
                                    StoreConsistencyError, TerminalData,
                                    TrajectoryStore, q_function)

from oracles import q_function_oracle


def rollout_store(period=6, steps=20, seed=0, dynamics=None):
    """Store filled by rolling random inputs through a stable LTV system."""
    rng = np.random.default_rng(seed)
    dyn = dynamics or LtvDynamics.constant(np.array([[0.9, 0.1], [0.0, 0.8]]),
                                           np.array([[0.0], [0.1]]), period=period)
    store = TrajectoryStore(np.array([1.0, 0.0]), period=period, dynamics=dyn)
    costs = []
    for t in range(steps):
        u = rng.uniform(-1, 1, size=1)
        x = store.states[t]
        h = float(x @ x + u @ u)
        store.record_step(t, dyn.step(t, x, u), u, h)
        costs.append(h)
    return store, costs


def test_record_step_lengths():
    store = TrajectoryStore(np.zeros(2), period=4)
    store.record_step(0, np.zeros(2), np.zeros(1), 0.0)
    assert len(store.states) == 2
    assert len(store.inputs) == 1
    assert len(store.cost_prefix) == 2


def test_record_step_zero_cost_keeps_prefix():
    store = TrajectoryStore(np.zeros(2), period=4)
    store.record_step(0, np.zeros(2), np.zeros(1), 0.0)
    assert store.cost_prefix == [0.0, 0.0]


def test_record_step_prefix_matches_direct_sum():
    store, costs = rollout_store(steps=3, seed=9)
    assert store.cost_prefix[3] == pytest.approx(sum(costs), rel=1e-12)


def test_record_step_consistency_guard():
    dyn = LtvDynamics.constant(np.eye(2), np.zeros((2, 1)), period=4)
    store = TrajectoryStore(np.ones(2), period=4, dynamics=dyn)
    with pytest.raises(StoreConsistencyError):
        store.record_step(0, np.array([1.0, 1.5]), np.zeros(1), 0.0)


def test_record_step_wrong_time():
    store = TrajectoryStore(np.zeros(1), period=2)
    with pytest.raises(ValueError):
        store.record_step(3, np.zeros(1), np.zeros(1), 0.0)


def test_return_cost_empty_sum():
    store, _ = rollout_store(steps=5)
    assert store.return_cost(5, 5) == 0.0
    assert store.return_cost(0, 0) == 0.0


def test_return_cost_shift_identity():
    # cost to return grows by the new stage cost and sheds the oldest one
    store, costs = rollout_store(steps=10, seed=4)
    t, i = 7, 3
    lhs = store.return_cost(t, i) - costs[i] + costs[t]
    rhs = store.return_cost(t + 1, i + 1)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_return_cost_matches_brute_force():
    store, costs = rollout_store(steps=20, seed=1)
    for t in range(21):
        for i in range(t + 1):
            assert store.return_cost(t, i) == pytest.approx(sum(costs[i:t]), rel=1e-12, abs=1e-15)


def test_return_cost_range_checks():
    store, _ = rollout_store(steps=5)
    with pytest.raises(IndexError):
        store.return_cost(6, 0)
    with pytest.raises(IndexError):
        store.return_cost(3, 4)


def test_terminal_data_figure_example():
    # P=6, N=3, current time 3P+1: slot 3P+4 collects x_4, x_{P+4}, x_{2P+4}
    P, N = 6, 3
    store, _ = rollout_store(period=P, steps=3 * P + 1, seed=2)
    t = 3 * P + 1
    td = store.terminal_data(t, t + N)
    assert td.vertex_times == [2 * P + 4, P + 4, 4]
    assert td.num_vertices == 3
    for j, idx in enumerate(td.vertex_times):
        assert np.array_equal(td.vertices[:, j], store.states[idx])
        assert td.costs[j] == pytest.approx(store.return_cost(t, idx))


def test_terminal_data_single_vertex_at_first_controlled_tick():
    P, N = 6, 2
    store, _ = rollout_store(period=P, steps=P, seed=3)
    td = store.terminal_data(P, P + N)
    assert td.vertex_times == [N]
    assert td.num_vertices == 1


def test_terminal_data_count_matches_enumeration():
    P, N = 5, 2
    for steps in range(P, 4 * P):
        store, _ = rollout_store(period=P, steps=steps, seed=steps)
        t = steps
        k = t + N
        if k - P < 0:
            continue
        td = store.terminal_data(t, k)
        expected = len([j for j in range(1, 10) if k - j * P >= 0])
        assert td.num_vertices == expected


def test_terminal_data_same_intracycle_time():
    P = 4
    store, _ = rollout_store(period=P, steps=3 * P + 2, seed=8)
    td = store.terminal_data(3 * P + 2, 3 * P + 2 + 1)
    assert len({i % P for i in td.vertex_times}) == 1


def test_terminal_data_empty_slot():
    store, _ = rollout_store(period=6, steps=3)
    with pytest.raises(EmptySafeSetError):
        store.terminal_data(3, 4)


def td_from(vertices, costs):
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    M = vertices.shape[1]
    return TerminalData(slot=0, vertices=vertices, costs=np.asarray(costs, float),
                        vertex_times=[0] * M, period=1)


def test_q_function_singleton():
    td = td_from([[1.0], [2.0]], [5.0])
    value, lam = q_function(td, np.array([1.0, 2.0]))
    assert value == pytest.approx(5.0, abs=1e-9)
    assert lam == pytest.approx([1.0], abs=1e-9)


def test_q_function_segment_interpolation():
    td = td_from([[0.0, 2.0]], [4.0, 8.0])
    value, lam = q_function(td, np.array([1.0]))
    assert value == pytest.approx(6.0, abs=1e-8)
    assert lam == pytest.approx([0.5, 0.5], abs=1e-7)


def test_q_function_skips_expensive_vertex():
    td = td_from([[0.0, 1.0, 2.0]], [4.0, 10.0, 8.0])
    value, _ = q_function(td, np.array([1.0]))
    assert value == pytest.approx(6.0, abs=1e-8)


def test_q_function_outside_hull_raises():
    td = td_from([[0.0, 1.0]], [1.0, 1.0])
    with pytest.raises(SafeSetQueryError) as err:
        q_function(td, np.array([2.0]))
    assert err.value.distance == pytest.approx(1.0, abs=1e-6)


def test_q_function_matches_subset_oracle():
    rng = np.random.default_rng(12)
    for _ in range(40):
        n = int(rng.integers(1, 4))
        M = int(rng.integers(1, 7))
        D = rng.normal(size=(n, M))
        J = rng.uniform(0, 10, size=M)
        w = rng.dirichlet(np.ones(M))
        x = D @ w
        value, lam = q_function(td_from(D, J), x)
        oracle = q_function_oracle(D, J, x)
        assert oracle is not None
        assert value == pytest.approx(oracle, abs=1e-6)
        assert np.all(lam >= -1e-9)
        assert np.sum(lam) == pytest.approx(1.0, abs=1e-7)
        assert np.max(np.abs(D @ lam - x)) <= 1e-6


def test_q_function_vertex_bound():
    rng = np.random.default_rng(33)
    D = rng.normal(size=(2, 5))
    J = rng.uniform(0, 10, size=5)
    td = td_from(D, J)
    for j in range(5):
        value, _ = q_function(td, D[:, j])
        assert value <= J[j] + 1e-7


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.floats(0, 1))
def test_q_function_convex_along_segments(a, b, theta):
    rng = np.random.default_rng(77)
    D = rng.normal(size=(2, 5))
    J = rng.uniform(0, 10, size=5)
    td = td_from(D, J)
    xa, xb = D[:, a], D[:, b]
    qa, _ = q_function(td, xa)
    qb, _ = q_function(td, xb)
    mid, _ = q_function(td, theta * xa + (1 - theta) * xb)
    assert mid <= theta * qa + (1 - theta) * qb + 1e-6


def test_store_csv_export(tmp_path):
    store, costs = rollout_store(steps=7, seed=5)
    path = tmp_path / "store.csv"
    store.to_csv(path)
    import csv as csv_mod
    with open(path) as fh:
        rows = list(csv_mod.reader(fh))
    assert rows[0] == ["t", "cycle", "tau", "x0", "x1", "u0", "h", "C"]
    assert len(rows) == 8
    assert float(rows[1][7]) == 0.0  # C_0
    assert float(rows[3][7]) == pytest.approx(sum(costs[:2]))
