"""Periodic control problem definition.

A problem instance couples P-periodic dynamics, polyhedral state/input
constraint schedules, and convex-quadratic stage cost schedules, all indexed
by the intracycle time tau = t mod P.  Everything here is immutable after
construction and evaluation is purely functional.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


class DimensionError(ValueError):
    """State/input vector does not match the problem dimensions."""


def intracycle(t: int, period: int) -> tuple[int, int]:
    """Split absolute time into (completed cycles M, intracycle time tau)."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if period < 1:
        raise ValueError(f"period must be positive, got {period}")
    cycle, tau = divmod(int(t), int(period))
    return cycle, tau


def _as_vector(v, dim: int, what: str) -> Array:
    arr = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
    if arr.shape != (dim,):
        raise DimensionError(f"{what} must have shape ({dim},), got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Polyhedral constraints
# ---------------------------------------------------------------------------

@dataclass
class Polyhedron:
    """Convex polyhedron {v : G v <= h}.  Zero rows means the whole space."""

    G: Array
    h: Array
    _nonempty: bool | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.G.size == 0:
            self.G = self.G.reshape(0, self.G.shape[1] if self.G.ndim == 2 and self.G.shape[1] else 0)
        if self.G.shape[0] != self.h.shape[0]:
            raise ValueError(f"row mismatch: G has {self.G.shape[0]} rows, h has {self.h.shape[0]}")

    def nonempty(self) -> bool:
        """Feasibility via a largest-inscribed-ball LP; result is cached."""
        if self.num_rows == 0:
            return True
        if self._nonempty is None:
            from .qp import PRIMAL_INFEASIBLE, solve_lp

            norms = np.linalg.norm(self.G, axis=1)
            A = np.vstack([np.hstack([self.G, norms[:, None]]),
                           np.concatenate([np.zeros(self.dim), [1.0]])])
            l = np.concatenate([np.full(self.num_rows, -np.inf), [0.0]])
            u = np.concatenate([self.h, [1e3]])
            q = np.concatenate([np.zeros(self.dim), [-1.0]])
            sol = solve_lp(q, A, l, u)
            self._nonempty = sol.status != PRIMAL_INFEASIBLE
        return self._nonempty

    @classmethod
    def empty_rows(cls, dim: int) -> "Polyhedron":
        """Unconstrained set in the given dimension."""
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def box(cls, lower, upper) -> "Polyhedron":
        """Axis-aligned box; infinite entries drop the corresponding row."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        dim = lower.size
        rows, rhs = [], []
        for i in range(dim):
            if np.isfinite(upper[i]):
                e = np.zeros(dim)
                e[i] = 1.0
                rows.append(e)
                rhs.append(upper[i])
            if np.isfinite(lower[i]):
                e = np.zeros(dim)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-lower[i])
        if not rows:
            return cls.empty_rows(dim)
        return cls(np.array(rows), np.array(rhs))

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @property
    def num_rows(self) -> int:
        return self.G.shape[0]

    def margins(self, v: Array) -> Array:
        """Signed margin per row; nonpositive everywhere iff v is inside."""
        if self.num_rows == 0:
            return np.zeros(0)
        return self.G @ np.asarray(v, dtype=float).ravel() - self.h

    def contains(self, v: Array, tol: float = 0.0) -> bool:
        m = self.margins(v)
        return bool(m.size == 0 or np.max(m) <= tol)

    def axis_bounds(self) -> tuple[Array, Array]:
        """Per-axis (lower, upper) bounds implied by single-coefficient rows.

        Rows coupling several coordinates are ignored; axes without such a
        row report -inf/+inf.  Used for plotting overlays, not for checking.
        """
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for g, b in zip(self.G, self.h):
            nz = np.nonzero(g)[0]
            if nz.size != 1:
                continue
            i = nz[0]
            if g[i] > 0:
                hi[i] = min(hi[i], b / g[i])
            else:
                lo[i] = max(lo[i], b / g[i])
        return lo, hi


@dataclass
class ConstraintSchedule:
    """P-periodic state and input polyhedra, one pair per intracycle time."""

    state: list[Polyhedron]
    input: list[Polyhedron]

    @property
    def period(self) -> int:
        return len(self.state)

    def at(self, t: int) -> tuple[Polyhedron, Polyhedron]:
        tau = t % self.period
        return self.state[tau], self.input[tau]


@dataclass
class ConstraintReport:
    """Signed margins of one (x, u) pair against the schedule at a tick."""

    t: int
    state_margins: Array
    input_margins: Array

    @property
    def max_margin(self) -> float:
        parts = [m for m in (self.state_margins, self.input_margins) if m.size]
        if not parts:
            return -np.inf
        return float(max(np.max(m) for m in parts))

    def feasible(self, tol: float = 0.0) -> bool:
        return self.max_margin <= tol


def check_constraints(cs: ConstraintSchedule, t: int, x: Array, u: Array) -> ConstraintReport:
    """Evaluate all constraint rows at time t; reports, never raises."""
    px, pu = cs.at(t)
    return ConstraintReport(t=t, state_margins=px.margins(x), input_margins=pu.margins(u))


# ---------------------------------------------------------------------------
# Stage costs
# ---------------------------------------------------------------------------

@dataclass
class StageCost:
    """Convex quadratic h(x, u) = (x-r)'Q(x-r) + u'Ru + lx'x + lu'u."""

    Q: Array
    R: Array
    x_ref: Array
    lin_x: Array | None = None
    lin_u: Array | None = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.x_ref = np.asarray(self.x_ref, dtype=float).ravel()
        if self.lin_x is not None:
            self.lin_x = np.asarray(self.lin_x, dtype=float).ravel()
        if self.lin_u is not None:
            self.lin_u = np.asarray(self.lin_u, dtype=float).ravel()

    def value(self, x: Array, u: Array) -> float:
        dx = np.asarray(x, dtype=float).ravel() - self.x_ref
        u = np.asarray(u, dtype=float).ravel()
        v = float(dx @ self.Q @ dx + u @ self.R @ u)
        if self.lin_x is not None:
            v += float(self.lin_x @ (dx + self.x_ref))
        if self.lin_u is not None:
            v += float(self.lin_u @ u)
        return v


@dataclass
class StageCostSchedule:
    """P-periodic list of stage costs plus convexity metadata."""

    entries: list[StageCost]
    strictly_convex: bool = False

    @property
    def period(self) -> int:
        return len(self.entries)

    @property
    def input_dependent(self) -> bool:
        return any(np.any(e.R != 0) or (e.lin_u is not None and np.any(e.lin_u != 0))
                   for e in self.entries)

    def at(self, t: int) -> StageCost:
        return self.entries[t % self.period]


def eval_stage_cost(cost: StageCostSchedule, t: int, x: Array, u: Array) -> float:
    entry = cost.at(t)
    x = _as_vector(x, entry.Q.shape[0], "state")
    u = _as_vector(u, entry.R.shape[0], "input")
    return entry.value(x, u)


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

@dataclass
class LtvDynamics:
    """x+ = A(tau) x + B(tau) u + c(tau), with P entries per schedule."""

    A: list[Array]
    B: list[Array]
    c: list[Array]

    is_linear = True

    def __post_init__(self):
        self.A = [np.atleast_2d(np.asarray(m, dtype=float)) for m in self.A]
        self.B = [np.atleast_2d(np.asarray(m, dtype=float)) for m in self.B]
        self.c = [np.asarray(v, dtype=float).ravel() for v in self.c]
        if not (len(self.A) == len(self.B) == len(self.c)):
            raise ValueError("A, B, c schedules must have equal length")

    @classmethod
    def constant(cls, A, B, c=None, period: int = 1) -> "LtvDynamics":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if c is None:
            c = np.zeros(A.shape[0])
        return cls([A] * period, [B] * period, [np.asarray(c, dtype=float)] * period)

    @property
    def period(self) -> int:
        return len(self.A)

    @property
    def state_dim(self) -> int:
        return self.A[0].shape[0]

    @property
    def input_dim(self) -> int:
        return self.B[0].shape[1]

    def affine_at(self, t: int) -> tuple[Array, Array, Array]:
        tau = t % self.period
        return self.A[tau], self.B[tau], self.c[tau]

    def step(self, t: int, x: Array, u: Array) -> Array:
        A, B, c = self.affine_at(t)
        return A @ x + B @ u + c


@dataclass
class NonlinearDynamics:
    """x+ = fn(tau, x, u) with tau = t mod period (periodicity by wrapping).

    jacobian, when given, returns the pair (d fn/d x, d fn/d u) at a point.
    input_weight_rule maps terminal multipliers on vertex states to input
    multipliers that keep convex combinations dynamics-consistent; systems
    without a registered rule lose the feasible-fallback guarantee.
    """

    fn: Callable[[int, Array, Array], Array]
    period: int
    state_dim: int
    input_dim: int
    jacobian: Callable[[int, Array, Array], tuple[Array, Array]] | None = None
    input_weight_rule: Callable[[Array, Array, Array], Array] | None = None
    name: str = ""

    is_linear = False

    def step(self, t: int, x: Array, u: Array) -> Array:
        tau = t % self.period
        out = np.asarray(self.fn(tau, np.asarray(x, float), np.asarray(u, float)), dtype=float).ravel()
        if out.shape != (self.state_dim,):
            raise DimensionError(f"dynamics returned shape {out.shape}, expected ({self.state_dim},)")
        return out


Dynamics = LtvDynamics | NonlinearDynamics


def eval_dynamics(dyn: Dynamics, t: int, x: Array, u: Array) -> Array:
    """One dynamics step; identical result for t and t + period."""
    x = _as_vector(x, dyn.state_dim, "state")
    u = _as_vector(u, dyn.input_dim, "input")
    return dyn.step(t, x, u)


def linearize_dynamics(dyn: Dynamics, t: int, x_bar: Array, u_bar: Array,
                       fd_step: float = 1e-6) -> tuple[Array, Array, Array]:
    """Affine model (A, B, c) with f(x, u) ~ A x + B u + c around (x_bar, u_bar).

    Exact for LTV dynamics.  Nonlinear dynamics use the analytic jacobian when
    registered, otherwise central finite differences with a relative step.
    """
    if dyn.is_linear:
        return dyn.affine_at(t)
    x_bar = _as_vector(x_bar, dyn.state_dim, "state")
    u_bar = _as_vector(u_bar, dyn.input_dim, "input")
    f0 = dyn.step(t, x_bar, u_bar)
    if dyn.jacobian is not None:
        A, B = dyn.jacobian(t % dyn.period, x_bar, u_bar)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
    else:
        n, d = dyn.state_dim, dyn.input_dim
        A = np.zeros((n, n))
        B = np.zeros((n, d))
        for i in range(n):
            h = fd_step * max(1.0, abs(x_bar[i]))
            xp, xm = x_bar.copy(), x_bar.copy()
            xp[i] += h
            xm[i] -= h
            A[:, i] = (dyn.step(t, xp, u_bar) - dyn.step(t, xm, u_bar)) / (2 * h)
        for i in range(d):
            h = fd_step * max(1.0, abs(u_bar[i]))
            up, um = u_bar.copy(), u_bar.copy()
            up[i] += h
            um[i] -= h
            B[:, i] = (dyn.step(t, x_bar, up) - dyn.step(t, x_bar, um)) / (2 * h)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError(f"non-finite jacobian entries at t={t}")
    c = f0 - A @ x_bar - B @ u_bar
    return A, B, c


# ---------------------------------------------------------------------------
# Problem spec and periodic seed trajectories
# ---------------------------------------------------------------------------

@dataclass
class ProblemSpec:
    """Full periodic control problem: dynamics, constraints, costs, sizes."""

    period: int
    horizon: int
    dynamics: Dynamics
    constraints: ConstraintSchedule
    cost: StageCostSchedule
    state_dim: int
    input_dim: int

    def validate(self) -> None:
        """Raise ValueError on any structural invariant violation."""
        P = self.period
        if P < 1:
            raise ValueError("period must be positive")
        if not (0 < self.horizon < P):
            raise ValueError(f"horizon must satisfy 0 < N < P, got N={self.horizon}, P={P}")
        if self.dynamics.period != P:
            raise ValueError(f"dynamics period {self.dynamics.period} != problem period {P}")
        if self.dynamics.state_dim != self.state_dim or self.dynamics.input_dim != self.input_dim:
            raise ValueError("dynamics dimensions disagree with the problem dimensions")
        if self.constraints.period != P:
            raise ValueError(f"constraint schedule has {self.constraints.period} entries, expected {P}")
        if self.cost.period != P:
            raise ValueError(f"cost schedule has {self.cost.period} entries, expected {P}")
        for tau in range(P):
            px, pu = self.constraints.at(tau)
            if px.dim != self.state_dim:
                raise ValueError(f"state polyhedron at tau={tau} has dim {px.dim}")
            if pu.dim != self.input_dim:
                raise ValueError(f"input polyhedron at tau={tau} has dim {pu.dim}")
            for poly, label in ((px, "state"), (pu, "input")):
                if not poly.nonempty():
                    raise ValueError(f"{label} polyhedron at tau={tau} is empty")
            entry = self.cost.at(tau)
            if entry.Q.shape != (self.state_dim, self.state_dim):
                raise ValueError(f"Q at tau={tau} has shape {entry.Q.shape}")
            if entry.R.shape != (self.input_dim, self.input_dim):
                raise ValueError(f"R at tau={tau} has shape {entry.R.shape}")
            for M, label in ((entry.Q, "Q"), (entry.R, "R")):
                if np.max(np.abs(M - M.T)) > 1e-12:
                    raise ValueError(f"{label} at tau={tau} is not symmetric")
                if M.size and np.min(np.linalg.eigvalsh(M)) < -1e-10:
                    raise ValueError(f"{label} at tau={tau} is not positive semidefinite")
            if not self.dynamics.is_linear and np.any(entry.R != 0):
                raise ValueError("nonlinear dynamics requires input-independent stage cost (R = 0)")

    def stage_cost(self, t: int, x: Array, u: Array) -> float:
        return eval_stage_cost(self.cost, t, x, u)

    def step(self, t: int, x: Array, u: Array) -> Array:
        return eval_dynamics(self.dynamics, t, x, u)


class SeedValidationError(ValueError):
    """A candidate periodic trajectory failed validation; carries diagnostics."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("seed trajectory invalid:\n  " + "\n  ".join(problems))


@dataclass
class PeriodicTrajectory:
    """One period of a feasible trajectory: states (P+1, n), inputs (P, d)."""

    states: Array
    inputs: Array

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))

    @property
    def period(self) -> int:
        return self.inputs.shape[0]

    def problems(self, spec: ProblemSpec, tol: float = 1e-8) -> list[str]:
        """Collect violations of the feasible-periodic-trajectory requirements."""
        out: list[str] = []
        P = spec.period
        if self.states.shape != (P + 1, spec.state_dim):
            out.append(f"states shape {self.states.shape}, expected {(P + 1, spec.state_dim)}")
            return out
        if self.inputs.shape != (P, spec.input_dim):
            out.append(f"inputs shape {self.inputs.shape}, expected {(P, spec.input_dim)}")
            return out
        wrap = float(np.max(np.abs(self.states[P] - self.states[0])))
        if wrap > tol:
            out.append(f"not periodic: |x_P - x_0| = {wrap:.3e} > {tol:.1e}")
        for t in range(P):
            x_next = spec.step(t, self.states[t], self.inputs[t])
            gap = float(np.max(np.abs(x_next - self.states[t + 1])))
            if gap > tol:
                out.append(f"dynamics mismatch at t={t}: {gap:.3e}")
            rep = check_constraints(spec.constraints, t, self.states[t], self.inputs[t])
            if not rep.feasible(tol):
                out.append(f"constraint violation at t={t}: {rep.max_margin:.3e}")
        rep = check_constraints(spec.constraints, P, self.states[P], np.zeros(spec.input_dim))
        if rep.state_margins.size and np.max(rep.state_margins) > tol:
            out.append(f"wrap state violates constraints: {np.max(rep.state_margins):.3e}")
        return out

    def validate(self, spec: ProblemSpec, tol: float = 1e-8) -> None:
        problems = self.problems(spec, tol)
        if problems:
            raise SeedValidationError(problems)
