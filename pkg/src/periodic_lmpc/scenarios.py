"""Benchmark scenario definitions and the scenario file format.

Four builtin scenarios exercise the controller on P = 100 systems:

* ``s1_tv_dynamics``     spring-mass with periodically varying stiffness,
                          set-point cost, |p| <= 0.3, N = 25
* ``s2_tv_constraints``  double integrator, input-energy cost, six-segment
                          periodic position bounds, N = 30, warmup seed
* ``s3_tv_cost``          double integrator, |q| <= 0.1, set-point switching
                          sign every half period, N = 15
* ``s4_nonlinear``        bilinear drive with periodic forcing, state-only
                          cost, p >= 0.5, |u| <= 5, N = 8, analytic seed

Scenario file schema (``plmpc-scenario-v1``), line oriented, ``#`` comments::

    format = plmpc-scenario-v1
    name = my_scenario
    period = 100            # ticks per cycle
    horizon = 25            # must be < period
    state_dim = 2
    input_dim = 1
    cycles = 10             # default cycle count for runs
    strictly_convex = true  # stage cost strictly convex in the decision vars
    seed = steady_state_origin          # or: warmup_mpc | analytic <name>
    seed_start = [-0.15; 0]             # optional warmup start state

    [dynamics]
    kind = builtin          # builtin | ltv
    name = double_integrator

    # explicit LTV alternative; tau ranges must partition [0, period)
    # [dynamics]
    # kind = ltv
    # A 0:100 = [1 0.1; 0 1]
    # B 0:100 = [0; 0.1]
    # c 0:100 = [0; 0]

    [constraints 0:100]     # one section per tau range, partition of [0, P)
    state_G = [1 0; -1 0]   # rows of G x <= h; [] for no rows
    state_h = [0.3; 0.3]
    input_G = []
    input_h = []

    [cost 0:100]            # one section per tau range, partition of [0, P)
    Q = [1 0; 0 0]
    R = [1]
    x_ref = [0.2; 0]

Matrices are MATLAB-style ``[a b; c d]`` literals; ``inf`` is allowed.
Builtin dynamics and analytic seed generators are referenced by registered
name so nonlinear maps round-trip through files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (ConstraintSchedule, LtvDynamics, NonlinearDynamics,
                    PeriodicTrajectory, Polyhedron, ProblemSpec, StageCost,
                    StageCostSchedule)

Array = np.ndarray

FORMAT_TAG = "plmpc-scenario-v1"
BUILTIN_NAMES = ("s1_tv_dynamics", "s2_tv_constraints", "s3_tv_cost", "s4_nonlinear")


class ScenarioError(ValueError):
    """Scenario construction or parsing failure, with a line number when known."""


@dataclass
class SeedPolicy:
    kind: str                     # steady_state_origin | warmup_mpc | analytic
    generator: str = ""           # registered name, analytic seeds only
    start_state: Array | None = None


@dataclass
class ScenarioConfig:
    name: str
    spec: ProblemSpec
    seed: SeedPolicy
    cycles: int = 10
    out_dir: str | None = None


# ---------------------------------------------------------------------------
# Registered dynamics and analytic seed generators
# ---------------------------------------------------------------------------

def _varying_stiffness_spring(period: int) -> LtvDynamics:
    """Spring-mass pair whose stiffness term swings with the cycle phase."""
    A = []
    for tau in range(period):
        A.append(np.array([[1.0, 0.1],
                           [0.1 * (1.0 - math.sin(2.0 * math.pi * tau / period)), 1.0]]))
    B = [np.array([[0.0], [0.1]])] * period
    c = [np.zeros(2)] * period
    return LtvDynamics(A=A, B=B, c=c)


def _double_integrator(period: int) -> LtvDynamics:
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.0], [0.1]])
    return LtvDynamics.constant(A, B, period=period)


def _bilinear_drive(period: int) -> NonlinearDynamics:
    """Position-velocity drive where forcing and input enter scaled by position."""

    def fn(tau, x, u):
        forcing = 5.0 * math.sin(2.0 * math.pi * tau / period)
        return np.array([x[0] + 0.1 * x[1],
                         x[1] + 0.1 * x[0] * (forcing + u[0])])

    def jacobian(tau, x, u):
        forcing = 5.0 * math.sin(2.0 * math.pi * tau / period)
        A = np.array([[1.0, 0.1],
                      [0.1 * (forcing + u[0]), 1.0]])
        B = np.array([[0.0], [0.1 * x[0]]])
        return A, B

    def input_weight_rule(lam, X, U):
        # weights proportional to multiplier times position keep convex
        # combinations consistent with the position-scaled input channel
        w = lam * X[0, :]
        total = float(np.sum(w))
        if total <= 0:
            raise ValueError("input weight rule needs positive vertex positions")
        return w / total

    return NonlinearDynamics(fn=fn, period=period, state_dim=2, input_dim=1,
                             jacobian=jacobian, input_weight_rule=input_weight_rule,
                             name="bilinear_drive")


DYNAMICS_REGISTRY = {
    "varying_stiffness_spring": _varying_stiffness_spring,
    "double_integrator": _double_integrator,
    "bilinear_drive": _bilinear_drive,
}


def _cancel_forcing_seed(spec: ProblemSpec) -> PeriodicTrajectory:
    """Hold the state constant by canceling the periodic forcing term."""
    P = spec.period
    states = np.zeros((P + 1, spec.state_dim))
    inputs = np.zeros((P, spec.input_dim))
    states[0] = np.array([1.0, 0.0])
    for t in range(P):
        inputs[t, 0] = -5.0 * math.sin(2.0 * math.pi * t / P)
        states[t + 1] = spec.step(t, states[t], inputs[t])
    return PeriodicTrajectory(states=states, inputs=inputs)


ANALYTIC_SEEDS = {
    "cancel_forcing": _cancel_forcing_seed,
}


# ---------------------------------------------------------------------------
# Builtin scenarios
# ---------------------------------------------------------------------------

def _uniform_constraints(period: int, state: Polyhedron, inp: Polyhedron) -> ConstraintSchedule:
    return ConstraintSchedule(state=[state] * period, input=[inp] * period)


def _uniform_cost(period: int, entry: StageCost, strictly_convex: bool) -> StageCostSchedule:
    return StageCostSchedule(entries=[entry] * period, strictly_convex=strictly_convex)


def segment_bounds(period: int) -> list[tuple[int, int, float, float]]:
    """Six-segment position-bound schedule (lo, hi per tau range) used by s2."""
    edges = [-(-i * period // 6) for i in range(7)]  # ceil(i*P/6)
    bands = [(-0.4, 0.1), (-0.4, -0.2), (-0.4, 0.1), (-0.1, 0.4), (0.2, 0.4), (-0.1, 0.4)]
    return [(edges[i], edges[i + 1], bands[i][0], bands[i][1]) for i in range(6)]


def builtin(name: str) -> ScenarioConfig:
    """Construct one of the four builtin benchmark scenarios."""
    P = 100
    if name == "s1_tv_dynamics":
        spec = ProblemSpec(
            period=P, horizon=25,
            dynamics=_varying_stiffness_spring(P),
            constraints=_uniform_constraints(
                P, Polyhedron.box([-0.3, -np.inf], [0.3, np.inf]), Polyhedron.empty_rows(1)),
            cost=_uniform_cost(P, StageCost(Q=np.diag([1.0, 0.0]), R=np.array([[1.0]]),
                                            x_ref=np.array([0.2, 0.0])), strictly_convex=True),
            state_dim=2, input_dim=1)
        return ScenarioConfig(name=name, spec=spec, seed=SeedPolicy("steady_state_origin"))
    if name == "s2_tv_constraints":
        state = []
        for lo_t, hi_t, lo_p, hi_p in segment_bounds(P):
            poly = Polyhedron.box([lo_p, -np.inf], [hi_p, np.inf])
            state.extend([poly] * (hi_t - lo_t))
        spec = ProblemSpec(
            period=P, horizon=30,
            dynamics=_double_integrator(P),
            constraints=ConstraintSchedule(state=state, input=[Polyhedron.empty_rows(1)] * P),
            cost=_uniform_cost(P, StageCost(Q=np.zeros((2, 2)), R=np.array([[1.0]]),
                                            x_ref=np.zeros(2)), strictly_convex=False),
            state_dim=2, input_dim=1)
        return ScenarioConfig(name=name, spec=spec,
                              seed=SeedPolicy("warmup_mpc", start_state=np.array([-0.15, 0.0])))
    if name == "s3_tv_cost":
        half = P // 2
        lo_ref = StageCost(Q=np.diag([1.0, 0.0]), R=np.array([[1.0]]), x_ref=np.array([-0.2, 0.0]))
        hi_ref = StageCost(Q=np.diag([1.0, 0.0]), R=np.array([[1.0]]), x_ref=np.array([0.2, 0.0]))
        spec = ProblemSpec(
            period=P, horizon=15,
            dynamics=_double_integrator(P),
            constraints=_uniform_constraints(
                P, Polyhedron.box([-np.inf, -0.1], [np.inf, 0.1]), Polyhedron.empty_rows(1)),
            cost=StageCostSchedule(entries=[lo_ref] * half + [hi_ref] * (P - half),
                                   strictly_convex=True),
            state_dim=2, input_dim=1)
        return ScenarioConfig(name=name, spec=spec, seed=SeedPolicy("steady_state_origin"))
    if name == "s4_nonlinear":
        spec = ProblemSpec(
            period=P, horizon=8,
            dynamics=_bilinear_drive(P),
            constraints=_uniform_constraints(
                P, Polyhedron.box([0.5, -np.inf], [np.inf, np.inf]),
                Polyhedron.box([-5.0], [5.0])),
            cost=_uniform_cost(P, StageCost(Q=np.diag([1.0, 0.0]), R=np.array([[0.0]]),
                                            x_ref=np.array([2.0, 0.0])), strictly_convex=False),
            state_dim=2, input_dim=1)
        return ScenarioConfig(name=name, spec=spec,
                              seed=SeedPolicy("analytic", generator="cancel_forcing"))
    raise ScenarioError(f"unknown builtin scenario {name!r}; known: {', '.join(BUILTIN_NAMES)}")


def make_seed(cfg: ScenarioConfig) -> PeriodicTrajectory:
    """Build and validate the scenario's feasible periodic seed trajectory."""
    spec = cfg.spec
    if cfg.seed.kind == "steady_state_origin":
        seed = PeriodicTrajectory(states=np.zeros((spec.period + 1, spec.state_dim)),
                                  inputs=np.zeros((spec.period, spec.input_dim)))
    elif cfg.seed.kind == "warmup_mpc":
        from .simulation import WarmupSettings, warmup_mpc
        seed = warmup_mpc(spec, WarmupSettings(start_state=cfg.seed.start_state))
    elif cfg.seed.kind == "analytic":
        try:
            generator = ANALYTIC_SEEDS[cfg.seed.generator]
        except KeyError:
            raise ScenarioError(f"unknown analytic seed generator {cfg.seed.generator!r}")
        seed = generator(spec)
    else:
        raise ScenarioError(f"unknown seed policy {cfg.seed.kind!r}")
    seed.validate(spec)
    return seed


# ---------------------------------------------------------------------------
# Scenario file reader/writer
# ---------------------------------------------------------------------------

def _fmt_matrix(m: Array) -> str:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return "[]"
    return "[" + "; ".join(" ".join(repr(float(v)) for v in row) for row in m) + "]"


def _parse_matrix(text: str, lineno: int) -> Array:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ScenarioError(f"line {lineno}: expected a [..] matrix literal, got {text!r}")
    body = text[1:-1].strip()
    if not body:
        return np.zeros((0, 0))
    rows = []
    for chunk in body.split(";"):
        try:
            rows.append([float(v) for v in chunk.split()])
        except ValueError:
            raise ScenarioError(f"line {lineno}: bad number in matrix literal {chunk!r}")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ScenarioError(f"line {lineno}: ragged matrix literal")
    return np.array(rows)


def _parse_range(text: str, period: int, lineno: int) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise ScenarioError(f"line {lineno}: expected a lo:hi tau range, got {text!r}")
    if not (0 <= lo < hi <= period):
        raise ScenarioError(f"line {lineno}: range {lo}:{hi} outside [0, {period})")
    return lo, hi


def _check_partition(ranges: list[tuple[int, int]], period: int, what: str) -> None:
    covered = np.zeros(period, dtype=int)
    for lo, hi in ranges:
        covered[lo:hi] += 1
    if np.any(covered != 1):
        gaps = np.nonzero(covered == 0)[0]
        overlaps = np.nonzero(covered > 1)[0]
        parts = []
        if gaps.size:
            parts.append(f"uncovered tau {gaps[:5].tolist()}")
        if overlaps.size:
            parts.append(f"overlapping tau {overlaps[:5].tolist()}")
        raise ScenarioError(f"{what} ranges must partition [0, {period}): " + ", ".join(parts))


def _compress(entries: list, same) -> list[tuple[int, int]]:
    """Runs of equal consecutive entries as (lo, hi) ranges."""
    ranges = []
    lo = 0
    for i in range(1, len(entries) + 1):
        if i == len(entries) or not same(entries[i], entries[lo]):
            ranges.append((lo, i))
            lo = i
    return ranges


def save_scenario(cfg: ScenarioConfig, path) -> None:
    spec = cfg.spec
    lines = [
        f"format = {FORMAT_TAG}",
        f"name = {cfg.name}",
        f"period = {spec.period}",
        f"horizon = {spec.horizon}",
        f"state_dim = {spec.state_dim}",
        f"input_dim = {spec.input_dim}",
        f"cycles = {cfg.cycles}",
        f"strictly_convex = {'true' if spec.cost.strictly_convex else 'false'}",
    ]
    if cfg.seed.kind == "analytic":
        lines.append(f"seed = analytic {cfg.seed.generator}")
    else:
        lines.append(f"seed = {cfg.seed.kind}")
    if cfg.seed.start_state is not None:
        lines.append("seed_start = " + _fmt_matrix(cfg.seed.start_state.reshape(-1, 1)))
    lines.append("")
    lines.append("[dynamics]")
    dyn = spec.dynamics
    if isinstance(dyn, NonlinearDynamics):
        if not dyn.name:
            raise ScenarioError("nonlinear dynamics needs a registered name to be saved")
        lines += ["kind = builtin", f"name = {dyn.name}"]
    else:
        registered = _match_registered_ltv(dyn)
        if registered:
            lines += ["kind = builtin", f"name = {registered}"]
        else:
            lines.append("kind = ltv")
            triples = [dyn.affine_at(tau) for tau in range(spec.period)]
            same = lambda a, b: all(np.array_equal(x, y) for x, y in zip(a, b))
            for lo, hi in _compress(triples, same):
                A, B, c = triples[lo]
                lines.append(f"A {lo}:{hi} = " + _fmt_matrix(A))
                lines.append(f"B {lo}:{hi} = " + _fmt_matrix(B))
                lines.append(f"c {lo}:{hi} = " + _fmt_matrix(c.reshape(-1, 1)))
    pairs = [spec.constraints.at(tau) for tau in range(spec.period)]
    same_pair = lambda a, b: (np.array_equal(a[0].G, b[0].G) and np.array_equal(a[0].h, b[0].h)
                              and np.array_equal(a[1].G, b[1].G) and np.array_equal(a[1].h, b[1].h))
    for lo, hi in _compress(pairs, same_pair):
        px, pu = pairs[lo]
        lines += ["", f"[constraints {lo}:{hi}]",
                  "state_G = " + _fmt_matrix(px.G), "state_h = " + _fmt_matrix(px.h.reshape(-1, 1)),
                  "input_G = " + _fmt_matrix(pu.G), "input_h = " + _fmt_matrix(pu.h.reshape(-1, 1))]
    costs = [spec.cost.at(tau) for tau in range(spec.period)]
    same_cost = lambda a, b: (np.array_equal(a.Q, b.Q) and np.array_equal(a.R, b.R)
                              and np.array_equal(a.x_ref, b.x_ref))
    for lo, hi in _compress(costs, same_cost):
        e = costs[lo]
        lines += ["", f"[cost {lo}:{hi}]", "Q = " + _fmt_matrix(e.Q), "R = " + _fmt_matrix(e.R),
                  "x_ref = " + _fmt_matrix(e.x_ref.reshape(-1, 1))]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _match_registered_ltv(dyn: LtvDynamics) -> str | None:
    for name, ctor in DYNAMICS_REGISTRY.items():
        ref = ctor(dyn.period)
        if not isinstance(ref, LtvDynamics):
            continue
        if all(np.allclose(a, b) for a, b in zip(ref.A, dyn.A)) and \
           all(np.allclose(a, b) for a, b in zip(ref.B, dyn.B)) and \
           all(np.allclose(a, b) for a, b in zip(ref.c, dyn.c)):
            return name
    return None


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file; raises ScenarioError with line numbers."""
    with open(path) as fh:
        raw = fh.readlines()

    top: dict[str, tuple[str, int]] = {}
    sections: list[tuple[str, str, int, dict[str, tuple[str, int]]]] = []
    current: dict[str, tuple[str, int]] | None = None
    for i, line in enumerate(raw, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError(f"line {i}: unterminated section header")
            head = line[1:-1].split()
            kind = head[0]
            arg = head[1] if len(head) > 1 else ""
            current = {}
            sections.append((kind, arg, i, current))
            continue
        if "=" not in line:
            raise ScenarioError(f"line {i}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        target = top if current is None else current
        if key in target:
            raise ScenarioError(f"line {i}: duplicate key {key!r}")
        target[key] = (value, i)

    def need(key: str) -> tuple[str, int]:
        if key not in top:
            raise ScenarioError(f"missing required key {key!r}")
        return top[key]

    fmt, fl = need("format")
    if fmt != FORMAT_TAG:
        raise ScenarioError(f"line {fl}: unsupported format {fmt!r}, expected {FORMAT_TAG}")

    def geti(key: str) -> int:
        value, ln = need(key)
        try:
            return int(value)
        except ValueError:
            raise ScenarioError(f"line {ln}: {key} must be an integer, got {value!r}")

    name = need("name")[0]
    period, horizon = geti("period"), geti("horizon")
    n, d = geti("state_dim"), geti("input_dim")
    cycles = int(top.get("cycles", ("10", 0))[0])
    strictly_convex = top.get("strictly_convex", ("false", 0))[0].lower() == "true"
    if not (0 < horizon < period):
        raise ScenarioError(f"horizon must satisfy 0 < N < period, got N={horizon}, P={period}")

    seed_text, seed_ln = need("seed")
    seed_parts = seed_text.split()
    if seed_parts[0] == "analytic":
        if len(seed_parts) != 2:
            raise ScenarioError(f"line {seed_ln}: analytic seed needs a generator name")
        seed = SeedPolicy("analytic", generator=seed_parts[1])
    elif seed_parts[0] in ("steady_state_origin", "warmup_mpc"):
        seed = SeedPolicy(seed_parts[0])
    else:
        raise ScenarioError(f"line {seed_ln}: unknown seed policy {seed_parts[0]!r}")
    if "seed_start" in top:
        value, ln = top["seed_start"]
        seed.start_state = _parse_matrix(value, ln).ravel()

    dyn_sections = [s for s in sections if s[0] == "dynamics"]
    if len(dyn_sections) != 1:
        raise ScenarioError("expected exactly one [dynamics] section")
    _, _, dln, dkv = dyn_sections[0]
    kind = dkv.get("kind", ("", dln))[0]
    if kind == "builtin":
        dname, ln = dkv.get("name", ("", dln))
        if dname not in DYNAMICS_REGISTRY:
            raise ScenarioError(f"line {ln}: unknown builtin dynamics {dname!r}")
        dynamics = DYNAMICS_REGISTRY[dname](period)
    elif kind == "ltv":
        A = [None] * period
        B = [None] * period
        c = [np.zeros(n)] * period
        seen: dict[str, list[tuple[int, int]]] = {"A": [], "B": [], "c": []}
        for key, (value, ln) in dkv.items():
            if key == "kind":
                continue
            parts = key.split()
            if len(parts) != 2 or parts[0] not in ("A", "B", "c"):
                raise ScenarioError(f"line {ln}: unknown dynamics key {key!r}")
            lo, hi = _parse_range(parts[1], period, ln)
            mat = _parse_matrix(value, ln)
            seen[parts[0]].append((lo, hi))
            for tau in range(lo, hi):
                if parts[0] == "A":
                    A[tau] = mat
                elif parts[0] == "B":
                    B[tau] = mat
                else:
                    c[tau] = mat.ravel()
        _check_partition(seen["A"], period, "dynamics A")
        _check_partition(seen["B"], period, "dynamics B")
        dynamics = LtvDynamics(A=A, B=B, c=c)
    else:
        raise ScenarioError(f"line {dln}: dynamics kind must be builtin or ltv, got {kind!r}")

    state_polys = [None] * period
    input_polys = [None] * period
    cons_ranges = []
    for s_kind, arg, ln, kv in sections:
        if s_kind != "constraints":
            continue
        lo, hi = _parse_range(arg, period, ln)
        cons_ranges.append((lo, hi))
        gx = _parse_matrix(*kv.get("state_G", ("[]", ln)))
        hx = _parse_matrix(*kv.get("state_h", ("[]", ln))).ravel()
        gu = _parse_matrix(*kv.get("input_G", ("[]", ln)))
        hu = _parse_matrix(*kv.get("input_h", ("[]", ln))).ravel()
        px = Polyhedron.empty_rows(n) if gx.size == 0 else Polyhedron(gx, hx)
        pu = Polyhedron.empty_rows(d) if gu.size == 0 else Polyhedron(gu, hu)
        for tau in range(lo, hi):
            state_polys[tau] = px
            input_polys[tau] = pu
    _check_partition(cons_ranges, period, "constraints")

    cost_entries = [None] * period
    cost_ranges = []
    for s_kind, arg, ln, kv in sections:
        if s_kind != "cost":
            continue
        lo, hi = _parse_range(arg, period, ln)
        cost_ranges.append((lo, hi))
        if "Q" not in kv or "R" not in kv:
            raise ScenarioError(f"line {ln}: cost section needs Q and R")
        Q = _parse_matrix(*kv["Q"])
        R = _parse_matrix(*kv["R"])
        x_ref = _parse_matrix(*kv.get("x_ref", (_fmt_matrix(np.zeros((n, 1))), ln))).ravel()
        entry = StageCost(Q=Q, R=R, x_ref=x_ref)
        for tau in range(lo, hi):
            cost_entries[tau] = entry
    _check_partition(cost_ranges, period, "cost")

    spec = ProblemSpec(period=period, horizon=horizon, dynamics=dynamics,
                       constraints=ConstraintSchedule(state=state_polys, input=input_polys),
                       cost=StageCostSchedule(entries=cost_entries,
                                              strictly_convex=strictly_convex),
                       state_dim=n, input_dim=d)
    try:
        spec.validate()
    except ValueError as exc:
        raise ScenarioError(f"invalid scenario {name!r}: {exc}") from exc
    return ScenarioConfig(name=name, spec=spec, seed=seed, cycles=cycles)


def specs_equal(a: ProblemSpec, b: ProblemSpec, tol: float = 0.0) -> bool:
    """Semantic equality of two problem specs (schedules compared per tau)."""
    if (a.period, a.horizon, a.state_dim, a.input_dim) != (b.period, b.horizon, b.state_dim, b.input_dim):
        return False
    if a.dynamics.is_linear != b.dynamics.is_linear:
        return False
    if a.dynamics.is_linear:
        for tau in range(a.period):
            for x, y in zip(a.dynamics.affine_at(tau), b.dynamics.affine_at(tau)):
                if not np.allclose(x, y, atol=tol):
                    return False
    else:
        if a.dynamics.name != b.dynamics.name:
            return False
    for tau in range(a.period):
        for pa, pb in zip(a.constraints.at(tau), b.constraints.at(tau)):
            if not (np.allclose(pa.G, pb.G, atol=tol) and np.allclose(pa.h, pb.h, atol=tol)):
                return False
        ea, eb = a.cost.at(tau), b.cost.at(tau)
        if not (np.allclose(ea.Q, eb.Q, atol=tol) and np.allclose(ea.R, eb.R, atol=tol)
                and np.allclose(ea.x_ref, eb.x_ref, atol=tol)):
            return False
    return a.cost.strictly_convex == b.cost.strictly_convex
