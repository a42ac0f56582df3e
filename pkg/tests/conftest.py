import numpy as np
import pytest

from periodic_lmpc.model import (ConstraintSchedule, LtvDynamics, Polyhedron,
                                 ProblemSpec, StageCost, StageCostSchedule)
from periodic_lmpc.scenarios import builtin


@pytest.fixture(scope="session")
def s1():
    return builtin("s1_tv_dynamics")


@pytest.fixture(scope="session")
def s2():
    return builtin("s2_tv_constraints")


@pytest.fixture(scope="session")
def s3():
    return builtin("s3_tv_cost")


@pytest.fixture(scope="session")
def s4():
    return builtin("s4_nonlinear")


def small_double_integrator_spec(period=6, horizon=2, p_bound=2.0, u_bound=1.0,
                                 x_ref=(0.0, 0.0), q_diag=(1.0, 0.0), r=1.0,
                                 strictly_convex=True):
    """Tiny double-integrator problem for fast controller tests."""
    dyn = LtvDynamics.constant(np.array([[1.0, 0.1], [0.0, 1.0]]),
                               np.array([[0.0], [0.1]]), period=period)
    state = Polyhedron.box([-p_bound, -np.inf], [p_bound, np.inf])
    inp = Polyhedron.box([-u_bound], [u_bound])
    cost = StageCost(Q=np.diag(q_diag), R=np.array([[r]]), x_ref=np.array(x_ref))
    return ProblemSpec(period=period, horizon=horizon, dynamics=dyn,
                       constraints=ConstraintSchedule(state=[state] * period,
                                                      input=[inp] * period),
                       cost=StageCostSchedule(entries=[cost] * period,
                                              strictly_convex=strictly_convex),
                       state_dim=2, input_dim=1)
