"""Learning MPC for periodic repetitive tasks.

Builds time-varying terminal sets and terminal costs from closed-loop data,
solves the resulting horizon problems as convex QPs (or via SQP for
nonlinear systems), and ships a simulation harness that machine-checks the
closed-loop guarantees.
"""
from .model import (ConstraintSchedule, Dynamics, LtvDynamics, NonlinearDynamics,
                    PeriodicTrajectory, Polyhedron, ProblemSpec, SeedValidationError,
                    StageCost, StageCostSchedule, check_constraints, eval_dynamics,
                    eval_stage_cost, intracycle, linearize_dynamics)
from .qp import (QpProblem, QpSettings, QpSolution, SOLVED, kkt_residuals,
                 solve_lp, solve_qp)
from .safe_set import TerminalData, TrajectoryStore, q_function
from .controller import (CandidateTrajectory, FtocpSolution, SqpSettings,
                         build_ftocp, candidate_shift, initial_candidate,
                         solve_lmpc_linear, solve_lmpc_nonlinear)
from .simulation import (PropertyReport, SimLog, SimSettings, WarmupSettings,
                         detect_periodic_convergence, run_closed_loop,
                         verify_properties, warmup_mpc)
from .scenarios import (BUILTIN_NAMES, ScenarioConfig, SeedPolicy, builtin,
                        load_scenario, make_seed, save_scenario)

__version__ = "0.1.0"
