import numpy as np
import pytest

from periodic_lmpc.model import PeriodicTrajectory, SeedValidationError
from periodic_lmpc.scenarios import builtin, make_seed
from periodic_lmpc.simulation import (SimSettings, WarmupSettings,
                                      detect_periodic_convergence, run_closed_loop,
                                      verify_properties, warmup_mpc)

from conftest import small_double_integrator_spec


def fixed_point_spec():
    """Origin steady state is globally optimal: holding still costs nothing."""
    return small_double_integrator_spec(period=6, horizon=2, x_ref=(0.0, 0.0),
                                        q_diag=(1.0, 1.0), r=1.0)


def origin_seed(spec):
    return PeriodicTrajectory(states=np.zeros((spec.period + 1, spec.state_dim)),
                              inputs=np.zeros((spec.period, spec.input_dim)))


def test_single_cycle_replays_seed_exactly():
    spec = fixed_point_spec()
    seed = origin_seed(spec)
    log = run_closed_loop(spec, seed, cycles=1)
    assert log.num_ticks == spec.period
    assert np.array_equal(log.states, seed.states[:-1])
    assert np.array_equal(log.inputs, seed.inputs)
    assert np.all(np.isnan(log.lmpc_cost))
    assert all(s == "seed" for s in log.status)


def test_optimal_seed_is_reproduced_forever():
    spec = fixed_point_spec()
    seed = origin_seed(spec)
    # perturbation search: any nonzero input sequence from the origin costs more
    rng = np.random.default_rng(0)
    for _ in range(50):
        u_seq = rng.normal(scale=0.3, size=(spec.period, 1))
        x = np.zeros(2)
        cost = 0.0
        for t in range(spec.period):
            cost += spec.stage_cost(t, x, u_seq[t])
            x = spec.step(t, x, u_seq[t])
        assert cost > 0.0
    log = run_closed_loop(spec, seed, cycles=4)
    assert np.max(np.abs(log.states)) <= 1e-7
    assert np.nanmax(np.abs(log.lmpc_cost)) <= 1e-7
    assert detect_periodic_convergence(log) == 1


def test_detect_convergence_needs_two_cycles():
    spec = fixed_point_spec()
    log = run_closed_loop(spec, origin_seed(spec), cycles=1)
    assert detect_periodic_convergence(log) is None


def test_detect_convergence_ignores_transient():
    spec = fixed_point_spec()
    log = run_closed_loop(spec, origin_seed(spec), cycles=4)
    # corrupt one early state: cycle 1 no longer matches cycle 0
    log.states[8, 0] += 1.0
    conv = detect_periodic_convergence(log)
    assert conv == 3  # cycles 1 and 2 both poisoned by the tick-8 edit


def test_verify_properties_flags_injected_violation():
    spec = fixed_point_spec()
    log = run_closed_loop(spec, origin_seed(spec), cycles=2)
    log.states[7, 0] = 99.0  # way outside |p| <= 2
    report = verify_properties(log, spec)
    assert report.worst_violation_tick == 7
    assert report.max_constraint_violation == pytest.approx(97.0)
    assert not report.checks()["recursive_feasibility"]["passed"]


def test_verify_properties_on_clean_run():
    spec = fixed_point_spec()
    log = run_closed_loop(spec, origin_seed(spec), cycles=3)
    report = verify_properties(log, spec)
    assert report.max_constraint_violation < 0  # strictly inside the box
    assert report.max_cost_increase < 1e-9
    assert report.num_fallback_ticks == 0
    assert report.all_passed()


def test_run_rejects_invalid_seed():
    spec = fixed_point_spec()
    bad = origin_seed(spec)
    bad.states[3] = np.array([5.0, 0.0])
    with pytest.raises(SeedValidationError):
        run_closed_loop(spec, bad, cycles=2)


def test_replay_determinism(s1):
    seed = make_seed(s1)
    a = run_closed_loop(s1.spec, seed, cycles=2)
    b = run_closed_loop(s1.spec, seed, cycles=2)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.lmpc_cost[100:], b.lmpc_cost[100:])
    assert a.status == b.status


def test_s1_short_run_is_feasible_and_monotone(s1):
    seed = make_seed(s1)
    log = run_closed_loop(s1.spec, seed, cycles=3)
    report = verify_properties(log, s1.spec)
    assert report.max_constraint_violation < 1e-6
    assert report.max_cost_increase < 1e-6
    assert log.cycle_cost(2) < log.cycle_cost(0)


def test_warmup_converges_to_feasible_steady_state():
    spec = small_double_integrator_spec(period=6, horizon=3, q_diag=(0.0, 0.0), r=1.0,
                                        strictly_convex=False)
    seed = warmup_mpc(spec, WarmupSettings(start_state=np.array([0.5, 0.0])))
    seed.validate(spec)
    assert np.max(np.abs(seed.states - seed.states[0])) <= 1e-6
    assert np.max(np.abs(seed.inputs)) <= 1e-6


def test_warmup_rejects_infeasible_start():
    spec = small_double_integrator_spec(period=6, horizon=3, p_bound=1.0)
    with pytest.raises(ValueError):
        warmup_mpc(spec, WarmupSettings(start_state=np.array([5.0, 0.0])))


def test_period_cost_bookkeeping():
    spec = fixed_point_spec()
    log = run_closed_loop(spec, origin_seed(spec), cycles=2)
    assert log.per_cycle_costs() == [0.0, 0.0]
    assert log.period_cost_from(3) == 0.0
