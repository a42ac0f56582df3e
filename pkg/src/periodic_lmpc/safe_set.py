"""Closed-loop data store, sampled safe sets, return costs, and the Q-function.

The store keeps the single realized trajectory plus stage-cost prefix sums,
so the cost accumulated between any two recorded times is an O(1) difference.
For an intracycle slot k the safe set collects every recorded state whose
time is k minus a whole number of periods; its vertices and their
return costs feed the terminal constraint and terminal cost of the
controller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Dynamics, intracycle
from .qp import QpProblem, QpSettings, SOLVED, solve_lp, solve_qp

Array = np.ndarray


class StoreConsistencyError(RuntimeError):
    """Recorded step disagrees with the dynamics; indicates a harness bug."""


class EmptySafeSetError(RuntimeError):
    """No recorded state exists for the requested slot yet."""


class SafeSetQueryError(RuntimeError):
    """Q-function query outside the convex safe set; carries a distance estimate."""

    def __init__(self, message: str, distance: float):
        super().__init__(message)
        self.distance = distance


class TrajectoryStore:
    """Single realized trajectory: states x_0..x_t, inputs u_0..u_{t-1},
    and prefix sums C_i of the stage costs (C_0 = 0)."""

    def __init__(self, x0: Array, period: int, dynamics: Dynamics | None = None,
                 consistency_tol: float = 1e-9):
        self.states: list[Array] = [np.asarray(x0, dtype=float).ravel()]
        self.inputs: list[Array] = []
        self.cost_prefix: list[float] = [0.0]
        self.period = int(period)
        self.dynamics = dynamics
        self.consistency_tol = consistency_tol

    @property
    def current_time(self) -> int:
        return len(self.inputs)

    def record_step(self, t: int, x_next: Array, u: Array, h: float) -> "TrajectoryStore":
        """Append one realized transition; h is the stage cost paid at time t."""
        if t != self.current_time:
            raise ValueError(f"record_step at t={t}, store is at t={self.current_time}")
        x_next = np.asarray(x_next, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        if self.dynamics is not None:
            predicted = self.dynamics.step(t, self.states[t], u)
            gap = float(np.max(np.abs(predicted - x_next)))
            if gap > self.consistency_tol:
                raise StoreConsistencyError(
                    f"recorded state at t={t + 1} deviates from dynamics by {gap:.3e}")
        self.states.append(x_next)
        self.inputs.append(u)
        self.cost_prefix.append(self.cost_prefix[-1] + float(h))
        return self

    def return_cost(self, t: int, i: int) -> float:
        """Realized cost accumulated from time i up to (excluding) time t."""
        if not (0 <= i <= t <= self.current_time):
            raise IndexError(f"need 0 <= i <= t <= {self.current_time}, got i={i}, t={t}")
        return self.cost_prefix[t] - self.cost_prefix[i]

    def terminal_data(self, t: int, k: int) -> "TerminalData":
        """Safe-set vertices and return costs for slot k, as known at time t."""
        if k - self.period < 0:
            raise EmptySafeSetError(
                f"slot {k} has no recorded states a whole period back (period {self.period})")
        times = []
        j = 1
        while k - j * self.period >= 0:
            idx = k - j * self.period
            if idx > self.current_time:
                raise ValueError(f"vertex time {idx} not recorded yet (t={self.current_time})")
            times.append(idx)
            j += 1
        vertices = np.column_stack([self.states[i] for i in times])
        costs = np.array([self.return_cost(t, i) for i in times])
        return TerminalData(slot=k, vertices=vertices, costs=costs,
                            vertex_times=times, period=self.period)

    def state_array(self) -> Array:
        return np.array(self.states)

    def input_array(self) -> Array:
        return np.array(self.inputs)

    def to_csv(self, path) -> None:
        """Write the recorded trajectory with stage costs and prefix sums."""
        import csv

        n = self.states[0].size
        d = self.inputs[0].size if self.inputs else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "cycle", "tau"] + [f"x{i}" for i in range(n)]
                            + [f"u{i}" for i in range(d)] + ["h", "C"])
            for t in range(self.current_time):
                cycle, tau = intracycle(t, self.period)
                h = self.cost_prefix[t + 1] - self.cost_prefix[t]
                writer.writerow(
                    [t, cycle, tau]
                    + [repr(float(v)) for v in self.states[t]]
                    + [repr(float(v)) for v in self.inputs[t]]
                    + [repr(float(h)), repr(float(self.cost_prefix[t]))])


@dataclass
class TerminalData:
    """Vertices (columns, most recent first) and return costs for one slot."""

    slot: int
    vertices: Array       # (n, M)
    costs: Array          # (M,)
    vertex_times: list[int]
    period: int

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[1]

    def __post_init__(self):
        taus = {intracycle(i, self.period)[1] for i in self.vertex_times}
        if len(taus) > 1:
            raise ValueError(f"safe-set vertices span several intracycle times: {sorted(taus)}")


def q_function(td: TerminalData, x: Array, settings: QpSettings | None = None
               ) -> tuple[float, Array]:
    """Cheapest convex combination of safe-set vertices reproducing x.

    Solves  min J' lam  s.t.  D lam = x,  sum lam = 1,  lam >= 0.
    Raises SafeSetQueryError when x is outside the convex hull.
    """
    x = np.asarray(x, dtype=float).ravel()
    n, M = td.vertices.shape
    if x.shape != (n,):
        raise ValueError(f"query must have shape ({n},), got {x.shape}")
    A = np.vstack([td.vertices, np.ones((1, M)), np.eye(M)])
    l = np.concatenate([x, [1.0], np.zeros(M)])
    u = np.concatenate([x, [1.0], np.full(M, np.inf)])
    sol = solve_lp(td.costs, A, l, u, settings)
    if sol.status != SOLVED:
        raise SafeSetQueryError(
            f"point is outside the convex safe set for slot {td.slot} "
            f"(solver status {sol.status}, distance ~{_hull_distance(td, x):.3e})",
            distance=_hull_distance(td, x))
    lam = np.maximum(sol.z, 0.0)
    return float(td.costs @ lam), lam


def _hull_distance(td: TerminalData, x: Array) -> float:
    """Euclidean distance from x to the convex hull of the vertices."""
    n, M = td.vertices.shape
    D = td.vertices
    H = 2.0 * (D.T @ D)
    q = -2.0 * (D.T @ x)
    A = np.vstack([np.ones((1, M)), np.eye(M)])
    l = np.concatenate([[1.0], np.zeros(M)])
    u = np.concatenate([[1.0], np.full(M, np.inf)])
    sol = solve_qp(QpProblem(H, q, A, l, u, validate=False))
    if sol.status != SOLVED:
        return float("nan")
    nearest = D @ np.maximum(sol.z, 0.0)
    return float(np.linalg.norm(nearest - x))
