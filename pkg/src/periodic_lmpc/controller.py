"""Receding-horizon controller with data-driven terminal set and cost.

Each tick solves a finite-time optimal control problem over horizon N whose
terminal state is constrained to the convex hull of same-slot recorded states
and whose terminal cost is the matching convex combination of return costs.
Linear problems are a single QP; nonlinear ones run SQP (linearize, solve the
QP, line-search on an l1 merit) started from the shifted previous solution.
The shifted solution plus one safe-set step is itself feasible for the next
tick, which provides both the warm start and a fallback action when a solve
fails.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from .model import ProblemSpec, linearize_dynamics
from .qp import MAX_ITER, SOLVED, QpProblem, QpSettings, solve_qp
from .safe_set import TerminalData, TrajectoryStore

Array = np.ndarray
log = logging.getLogger(__name__)

STATE_FEASIBILITY_WARN_TOL = 1e-6


class ControllerError(RuntimeError):
    """Solve failed and no feasible fallback was available."""


@dataclass
class FtocpIndexing:
    """Variable layout of the stacked QP: states, then inputs, then multipliers."""

    n: int
    d: int
    N: int
    M: int

    @property
    def num_vars(self) -> int:
        return (self.N + 1) * self.n + self.N * self.d + self.M

    def x_slice(self, k: int) -> slice:
        return slice(k * self.n, (k + 1) * self.n)

    def u_slice(self, k: int) -> slice:
        base = (self.N + 1) * self.n
        return slice(base + k * self.d, base + (k + 1) * self.d)

    @property
    def lam_slice(self) -> slice:
        base = (self.N + 1) * self.n + self.N * self.d
        return slice(base, base + self.M)

    def pack(self, states: Array, inputs: Array, lam: Array) -> Array:
        return np.concatenate([np.asarray(states).ravel(),
                               np.asarray(inputs).ravel(),
                               np.asarray(lam).ravel()])

    def unpack(self, z: Array) -> tuple[Array, Array, Array]:
        nx = (self.N + 1) * self.n
        nu = self.N * self.d
        states = z[:nx].reshape(self.N + 1, self.n)
        inputs = z[nx:nx + nu].reshape(self.N, self.d)
        return states, inputs, z[nx + nu:]


@dataclass
class FtocpSolution:
    """Open-loop plan returned by one solve, plus solver diagnostics."""

    start_time: int
    states: Array           # (N+1, n)
    inputs: Array           # (N, d)
    multipliers: Array      # (M,)
    cost: float
    status: str
    iterations: int = 0
    sqp_iterations: int = 0
    fallback: bool = False
    dual: Array | None = None

    @property
    def action(self) -> Array:
        return self.inputs[0]


@dataclass
class CandidateTrajectory:
    """Shifted previous plan plus one safe-set step; feasible at start_time
    for LTV systems (and for nonlinear ones with an input weight rule)."""

    start_time: int
    states: Array           # (N+1, n)
    inputs: Array           # (N, d)
    multipliers: Array      # (M_new,) aligned with terminal_data at start_time
    valid: bool = True


def _assemble_ftocp(spec: ProblemSpec, td: TerminalData, t: int, x_t: Array,
                    affine: list[tuple[Array, Array, Array]]) -> tuple[QpProblem, FtocpIndexing]:
    """Stack the horizon QP given per-step affine dynamics models."""
    n, d, N, M = spec.state_dim, spec.input_dim, spec.horizon, td.num_vertices
    idx = FtocpIndexing(n=n, d=d, N=N, M=M)
    m = idx.num_vars

    H = np.zeros((m, m))
    q = np.zeros(m)
    rows: list[Array] = []
    lo: list[Array] = []
    up: list[Array] = []

    def add_rows(block: Array, l: Array, u: Array) -> None:
        rows.append(block)
        lo.append(np.atleast_1d(l))
        up.append(np.atleast_1d(u))

    # initial condition
    init = np.zeros((n, m))
    init[:, idx.x_slice(0)] = np.eye(n)
    add_rows(init, x_t, x_t)

    # dynamics equalities x_{k+1} - A_k x_k - B_k u_k = c_k
    for k in range(N):
        A_k, B_k, c_k = affine[k]
        blk = np.zeros((n, m))
        blk[:, idx.x_slice(k + 1)] = np.eye(n)
        blk[:, idx.x_slice(k)] = -A_k
        blk[:, idx.u_slice(k)] = -B_k
        add_rows(blk, c_k, c_k)

    # terminal state equals the convex combination of safe-set vertices
    term = np.zeros((n, m))
    term[:, idx.x_slice(N)] = np.eye(n)
    term[:, idx.lam_slice] = -td.vertices
    add_rows(term, np.zeros(n), np.zeros(n))
    ones = np.zeros((1, m))
    ones[0, idx.lam_slice] = 1.0
    add_rows(ones, np.ones(1), np.ones(1))

    # stage constraints over k = 0..N-1
    for k in range(N):
        px, pu = spec.constraints.at(t + k)
        if px.num_rows:
            blk = np.zeros((px.num_rows, m))
            blk[:, idx.x_slice(k)] = px.G
            add_rows(blk, np.full(px.num_rows, -np.inf), px.h)
        if pu.num_rows:
            blk = np.zeros((pu.num_rows, m))
            blk[:, idx.u_slice(k)] = pu.G
            add_rows(blk, np.full(pu.num_rows, -np.inf), pu.h)

    # multipliers are a probability vector
    lam_rows = np.zeros((M, m))
    lam_rows[:, idx.lam_slice] = np.eye(M)
    add_rows(lam_rows, np.zeros(M), np.full(M, np.inf))

    # stage costs; the terminal cost is linear in the multipliers
    for k in range(N):
        entry = spec.cost.at(t + k)
        xs, us = idx.x_slice(k), idx.u_slice(k)
        H[xs, xs] += 2.0 * entry.Q
        q[xs] += -2.0 * entry.Q @ entry.x_ref
        if entry.lin_x is not None:
            q[xs] += entry.lin_x
        H[us, us] += 2.0 * entry.R
        if entry.lin_u is not None:
            q[us] += entry.lin_u
    q[idx.lam_slice] += td.costs

    A = sparse.csc_matrix(np.vstack(rows))
    prob = QpProblem(sparse.csc_matrix(H), q, A,
                     np.concatenate(lo), np.concatenate(up), validate=False)
    return prob, idx


def build_ftocp(spec: ProblemSpec, td: TerminalData, t: int, x_t: Array,
                affine_models: list[tuple[Array, Array, Array]] | None = None
                ) -> tuple[QpProblem, FtocpIndexing]:
    """QP encoding of the horizon problem at time t from measured state x_t."""
    if td.num_vertices == 0:
        raise ValueError("terminal data has no vertices")
    x_t = np.asarray(x_t, dtype=float).ravel()
    px, _ = spec.constraints.at(t)
    margins = px.margins(x_t)
    if margins.size and np.max(margins) > STATE_FEASIBILITY_WARN_TOL:
        log.warning("measured state at t=%d violates constraints by %.3e", t, np.max(margins))
    if affine_models is None:
        if not spec.dynamics.is_linear:
            raise ValueError("nonlinear dynamics needs affine_models (linearization points)")
        affine_models = [spec.dynamics.affine_at(t + k) for k in range(spec.horizon)]
    return _assemble_ftocp(spec, td, t, x_t, affine_models)


def plan_cost(spec: ProblemSpec, td: TerminalData, t: int,
              states: Array, inputs: Array, lam: Array) -> float:
    """Stage costs along a plan plus the terminal return-cost combination."""
    total = sum(spec.stage_cost(t + k, states[k], inputs[k]) for k in range(spec.horizon))
    return float(total + td.costs @ lam)


def _warm_vectors(idx: FtocpIndexing, warm: CandidateTrajectory | None
                  ) -> tuple[Array | None, Array | None]:
    if warm is None or warm.multipliers.shape != (idx.M,):
        return None, None
    return idx.pack(warm.states, warm.inputs, warm.multipliers), None


def _fallback_solution(spec: ProblemSpec, td: TerminalData, t: int,
                       warm: CandidateTrajectory | None, status: str,
                       iterations: int, sqp_iterations: int = 0) -> FtocpSolution:
    if warm is None or not warm.valid:
        raise ControllerError(
            f"solver returned {status} at t={t} and no feasible fallback is available")
    log.warning("solver returned %s at t=%d; applying the shifted-candidate action", status, t)
    cost = plan_cost(spec, td, t, warm.states, warm.inputs, warm.multipliers)
    return FtocpSolution(start_time=t, states=warm.states.copy(), inputs=warm.inputs.copy(),
                         multipliers=warm.multipliers.copy(), cost=cost, status=status,
                         iterations=iterations, sqp_iterations=sqp_iterations, fallback=True)


def solve_lmpc_linear(spec: ProblemSpec, store: TrajectoryStore, t: int, x_t: Array,
                      warm: CandidateTrajectory | None = None,
                      settings: QpSettings | None = None) -> FtocpSolution:
    """One controller step for LTV dynamics; falls back to the candidate on failure."""
    td = store.terminal_data(t, t + spec.horizon)
    prob, idx = build_ftocp(spec, td, t, x_t)
    wp, wd = _warm_vectors(idx, warm)
    sol = solve_qp(prob, settings, warm_primal=wp, warm_dual=wd)
    if sol.status != SOLVED:
        return _fallback_solution(spec, td, t, warm, sol.status, sol.iterations)
    states, inputs, lam = idx.unpack(sol.z)
    lam = np.maximum(lam, 0.0)
    return FtocpSolution(start_time=t, states=states, inputs=inputs, multipliers=lam,
                         cost=plan_cost(spec, td, t, states, inputs, lam),
                         status=sol.status, iterations=sol.iterations, dual=sol.y)


@dataclass(frozen=True)
class SqpSettings:
    max_sqp_iter: int = 30
    step_tol: float = 1e-7
    merit_penalty: float = 10.0
    backtrack: float = 0.5
    min_step: float = 1e-4
    armijo: float = 1e-6
    feas_tol: float = 1e-6
    damping: float = 1.0          # proximal weight on the step, trust-region style
    damping_min: float = 1e-8
    damping_max: float = 1e8
    stall_tol: float = 3e-6       # relative merit decrease considered progress
    qp: QpSettings = field(default_factory=QpSettings)


def _merit(spec: ProblemSpec, td: TerminalData, t: int, states: Array,
           inputs: Array, lam: Array, mu: float) -> float:
    """True cost plus an l1 penalty on dynamics defects and constraint violations."""
    N = spec.horizon
    value = plan_cost(spec, td, t, states, inputs, lam)
    defect = 0.0
    for k in range(N):
        defect += float(np.sum(np.abs(states[k + 1] - spec.step(t + k, states[k], inputs[k]))))
        px, pu = spec.constraints.at(t + k)
        defect += float(np.sum(np.maximum(px.margins(states[k]), 0.0)))
        defect += float(np.sum(np.maximum(pu.margins(inputs[k]), 0.0)))
    defect += float(np.sum(np.abs(states[N] - td.vertices @ lam)))
    defect += abs(float(np.sum(lam)) - 1.0) + float(np.sum(np.maximum(-lam, 0.0)))
    return value + mu * defect


def solve_lmpc_nonlinear(spec: ProblemSpec, store: TrajectoryStore, t: int, x_t: Array,
                         warm: CandidateTrajectory | None = None,
                         settings: SqpSettings | None = None) -> FtocpSolution:
    """SQP controller step: iterate linearize / solve QP / backtracking line search.

    The returned trajectory is re-integrated through the exact dynamics and
    audited against constraints; on SQP failure the candidate action is used.
    """
    st = settings or SqpSettings()
    N, n = spec.horizon, spec.state_dim
    td = store.terminal_data(t, t + N)
    x_t = np.asarray(x_t, dtype=float).ravel()
    if warm is None:
        raise ControllerError(f"nonlinear solve at t={t} needs an initial trajectory")
    ref_x, ref_u, ref_lam = warm.states.copy(), warm.inputs.copy(), warm.multipliers.copy()
    ref_x[0] = x_t
    if ref_lam.shape != (td.num_vertices,):
        raise ControllerError("warm-start multipliers do not match the safe set")

    mu = st.merit_penalty
    prev_dual: Array | None = None
    qp_iters = 0
    sqp_it = 0
    converged = False
    omega = st.damping
    stalls = 0
    for sqp_it in range(1, st.max_sqp_iter + 1):
        affine = [linearize_dynamics(spec.dynamics, t + k, ref_x[k], ref_u[k]) for k in range(N)]
        prob, idx = _assemble_ftocp(spec, td, t, x_t, affine)
        # proximal damping centered at the linearization point: shapes the QP
        # like a trust region and keeps it strictly convex in the inputs even
        # when the stage cost has no input term; its bias vanishes with the step
        damp = np.zeros(idx.num_vars)
        q_ext = prob.q.copy()
        for k in range(N):
            sl = idx.u_slice(k)
            damp[sl] = 2.0 * omega
            q_ext[sl] -= 2.0 * omega * ref_u[k]
        damp[idx.lam_slice] = 2.0 * omega
        q_ext[idx.lam_slice] -= 2.0 * omega * ref_lam
        ext = QpProblem(prob.H + sparse.diags(damp), q_ext, prob.A, prob.l, prob.u,
                        validate=False)
        sol = solve_qp(ext, st.qp, warm_primal=idx.pack(ref_x, ref_u, ref_lam),
                       warm_dual=prev_dual)
        qp_iters += sol.iterations
        if sol.status != SOLVED and max(sol.residuals) > st.feas_tol:
            # unusable subproblem result: damp harder and rebuild
            omega = min(omega * 10.0, st.damping_max)
            continue
        prev_dual = sol.y
        # the merit only penalizes dynamics defects (all other constraints are
        # linear and hold along the search segment), so exactness needs mu to
        # dominate the dynamics-row duals only
        y_dyn = sol.y[n:n + N * n]
        if y_dyn.size:
            mu = max(mu, 1.5 * float(np.max(np.abs(y_dyn))))
        qp_x, qp_u, qp_lam = idx.unpack(sol.z)
        dx, du, dlam = qp_x - ref_x, qp_u - ref_u, qp_lam - ref_lam
        step_norm = max(float(np.max(np.abs(dx))), float(np.max(np.abs(du))),
                        float(np.max(np.abs(dlam))) if dlam.size else 0.0)
        # a small step only certifies optimality when the damping is not the
        # thing making it small
        if step_norm < st.step_tol and omega <= st.damping:
            converged = True
            break
        base = _merit(spec, td, t, ref_x, ref_u, ref_lam, mu)
        alpha = 1.0
        accepted = False
        while alpha >= st.min_step:
            trial_x = ref_x + alpha * dx
            trial_u = ref_u + alpha * du
            trial_lam = ref_lam + alpha * dlam
            if _merit(spec, td, t, trial_x, trial_u, trial_lam, mu) <= base - st.armijo * alpha * step_norm:
                ref_x, ref_u, ref_lam = trial_x, trial_u, trial_lam
                accepted = True
                break
            alpha *= st.backtrack
        if not accepted:
            if step_norm < 100.0 * st.step_tol:
                converged = True  # no merit decrease available along a noise-scale step
                break
            omega = min(omega * 10.0, st.damping_max)
            continue
        gain = base - _merit(spec, td, t, ref_x, ref_u, ref_lam, mu)
        if gain <= st.stall_tol * (1.0 + abs(base)):
            stalls += 1
            if stalls >= 2:
                converged = True  # flat valley: audited plan is as good as it gets here
                break
        else:
            stalls = 0
        if alpha == 1.0:
            omega = max(omega / 2.0, st.damping_min)
        elif alpha < 0.25:
            omega = min(omega * 4.0, st.damping_max)
        if alpha * step_norm < st.step_tol and omega <= st.damping:
            converged = True
            break

    # re-integrate through the exact dynamics and audit the plan
    solved = _reintegrated_plan(spec, td, t, x_t, ref_u, ref_lam, st.feas_tol)
    if not converged or solved is None:
        return _fallback_solution(spec, td, t, warm, MAX_ITER, qp_iters, sqp_it)
    states, inputs, lam, cost = solved
    if warm.valid:
        # tie-break toward repeating the shifted previous plan: on a flat
        # valley this locks the closed loop onto a periodic orbit instead of
        # wandering among equally good plans
        cand = _reintegrated_plan(spec, td, t, x_t, warm.inputs, warm.multipliers,
                                  st.feas_tol)
        if cand is not None and cand[3] <= cost + st.stall_tol * (1.0 + abs(cost)):
            states, inputs, lam, cost = cand
    return FtocpSolution(start_time=t, states=states, inputs=inputs, multipliers=lam,
                         cost=cost, status=SOLVED, iterations=qp_iters,
                         sqp_iterations=sqp_it, dual=prev_dual)


def _plan_feasible(spec: ProblemSpec, td: TerminalData, t: int, states: Array,
                   inputs: Array, lam: Array, tol: float) -> bool:
    for k in range(spec.horizon):
        px, pu = spec.constraints.at(t + k)
        mx = px.margins(states[k])
        mu_ = pu.margins(inputs[k])
        if (mx.size and np.max(mx) > tol) or (mu_.size and np.max(mu_) > tol):
            return False
    return bool(np.max(np.abs(states[spec.horizon] - td.vertices @ lam)) <= tol)


def _reintegrated_plan(spec: ProblemSpec, td: TerminalData, t: int, x_t: Array,
                       inputs: Array, lam: Array, tol: float
                       ) -> tuple[Array, Array, Array, float] | None:
    """Roll the inputs through the exact dynamics and audit the result."""
    N, n = spec.horizon, spec.state_dim
    states = np.zeros((N + 1, n))
    states[0] = x_t
    for k in range(N):
        states[k + 1] = spec.step(t + k, states[k], inputs[k])
    lam = np.maximum(np.asarray(lam, dtype=float), 0.0)
    s = float(np.sum(lam))
    if s > 0:
        lam = lam / s
    if not _plan_feasible(spec, td, t, states, inputs, lam, tol):
        return None
    return states, inputs.copy(), lam, plan_cost(spec, td, t, states, inputs, lam)


def candidate_shift(prev: FtocpSolution, spec: ProblemSpec, store: TrajectoryStore,
                    t_next: int) -> CandidateTrajectory:
    """Shift the previous plan one tick and append the safe-set step.

    The appended state is the multiplier-weighted combination of the recorded
    successors of the previous terminal vertices; the appended input reuses
    the recorded vertex inputs, reweighted by the dynamics' input weight rule
    (identity weights for LTV systems).
    """
    if t_next != prev.start_time + 1:
        raise ValueError(f"candidate_shift expects t={prev.start_time + 1}, got {t_next}")
    N = spec.horizon
    slot_prev = prev.start_time + N
    vertex_times = []
    j = 1
    while slot_prev - j * store.period >= 0:
        vertex_times.append(slot_prev - j * store.period)
        j += 1
    if len(vertex_times) != prev.multipliers.size:
        raise ValueError("previous solution multipliers do not match the recorded safe set")
    X = np.column_stack([store.states[i] for i in vertex_times])
    U = np.column_stack([store.inputs[i] for i in vertex_times])
    X_next = np.column_stack([store.states[i + 1] for i in vertex_times])
    lam = prev.multipliers

    valid = True
    if spec.dynamics.is_linear:
        gamma = lam
    elif spec.dynamics.input_weight_rule is not None:
        gamma = np.asarray(spec.dynamics.input_weight_rule(lam, X, U), dtype=float).ravel()
        if gamma.shape != lam.shape or np.any(gamma < -1e-9) or abs(np.sum(gamma) - 1.0) > 1e-9:
            raise ControllerError("input weight rule returned an invalid multiplier vector")
    else:
        gamma = lam
        valid = False

    states = np.vstack([prev.states[1:], X_next @ lam])
    inputs = np.vstack([prev.inputs[1:], U @ gamma])

    slot_next = slot_prev + 1
    M_next = 0
    j = 1
    while slot_next - j * store.period >= 0:
        M_next += 1
        j += 1
    multipliers = np.zeros(M_next)
    multipliers[:lam.size] = lam
    return CandidateTrajectory(start_time=t_next, states=states, inputs=inputs,
                               multipliers=multipliers, valid=valid)


def initial_candidate(spec: ProblemSpec, store: TrajectoryStore, t: int) -> CandidateTrajectory:
    """Periodic continuation of the recorded previous cycle, used at the first
    controlled tick: replays the inputs one period back from the current state."""
    N = spec.horizon
    if t < store.period:
        raise ValueError("initial candidate needs a full recorded period")
    states = np.zeros((N + 1, spec.state_dim))
    inputs = np.zeros((N, spec.input_dim))
    states[0] = store.states[t]
    for k in range(N):
        inputs[k] = store.inputs[t + k - store.period]
        states[k + 1] = spec.step(t + k, states[k], inputs[k])
    slot = t + N
    M = 0
    j = 1
    while slot - j * store.period >= 0:
        M += 1
        j += 1
    multipliers = np.zeros(M)
    multipliers[0] = 1.0
    return CandidateTrajectory(start_time=t, states=states, inputs=inputs,
                               multipliers=multipliers, valid=True)
