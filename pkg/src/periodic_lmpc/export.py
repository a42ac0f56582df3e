"""CSV and JSON serialization of runs.

All default outputs are byte-reproducible: floats are written with repr
(shortest round-trip form), wall-clock timing is excluded unless explicitly
requested, and manifests are written atomically.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .model import ProblemSpec
from .simulation import PropertyReport, SimLog

TRAJECTORY_FILE = "trajectory.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"
SCENARIO_FILE = "scenario.cfg"
SLICE_FILES = ("states.csv", "inputs.csv", "cost.csv")


def _fmt(v: float) -> str:
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def trajectory_header(n: int, d: int) -> list[str]:
    return (["t", "cycle", "tau"]
            + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(d)]
            + ["stage_cost", "lmpc_cost", "status", "sqp_iters", "solve_ms"])


def write_trajectory_csv(log: SimLog, path, timing: bool = False) -> None:
    n, d = log.state_dim, log.input_dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trajectory_header(n, d))
        for i in range(log.num_ticks):
            seed_row = log.status[i] == "seed"
            row = [str(int(log.t[i])), str(int(log.cycle[i])), str(int(log.tau[i]))]
            row += [_fmt(v) for v in log.states[i]]
            row += [_fmt(v) for v in log.inputs[i]]
            row.append(_fmt(log.stage_cost[i]))
            row.append(_fmt(log.lmpc_cost[i]))
            row.append(log.status[i])
            row.append("" if seed_row else str(int(log.sqp_iters[i])))
            row.append(f"{log.solve_ms[i]:.3f}" if (timing and not seed_row) else "")
            writer.writerow(row)


def read_trajectory_csv(path) -> dict[str, list]:
    """Columns of a trajectory or slice CSV; numeric fields parsed, '' -> nan."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols: dict[str, list] = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(v)
    out: dict[str, list] = {}
    for h, values in cols.items():
        if h == "status":
            out[h] = values
        else:
            out[h] = [np.nan if v == "" else float(v) for v in values]
    return out


def run_summary(name: str, cycles: int, log: SimLog, report: PropertyReport) -> dict:
    return {
        "scenario": name,
        "cycles": cycles,
        "period": log.period,
        "convergence_cycle": report.convergence_cycle,
        "per_cycle_cost": log.per_cycle_costs(),
        "properties": report.to_dict(),
        "checks": report.checks(),
        "all_passed": report.all_passed(),
    }


def write_json(data: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def settings_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def write_manifest(path, scenario: str, shash: str, outputs: list[str],
                   exit_status: int, properties: dict | None, error: str | None = None) -> None:
    """Atomic write: the manifest appears only fully formed."""
    data = {
        "scenario": scenario,
        "settings_hash": shash,
        "outputs": outputs,
        "exit_status": exit_status,
        "properties": properties,
    }
    if error is not None:
        data["error"] = error
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def write_figure_slices(run_dir, spec: ProblemSpec) -> list[str]:
    """Per-figure CSV slices (states, inputs, LMPC cost) with constraint bounds."""
    run_dir = Path(run_dir)
    cols = read_trajectory_csv(run_dir / TRAJECTORY_FILE)
    ticks = [int(v) for v in cols["t"]]
    n, d = spec.state_dim, spec.input_dim

    state_bounds = []
    input_bounds = []
    for tau in range(spec.period):
        px, pu = spec.constraints.at(tau)
        state_bounds.append(px.axis_bounds())
        input_bounds.append(pu.axis_bounds())

    def bound_str(v: float) -> str:
        return "" if not np.isfinite(v) else repr(float(v))

    with open(run_dir / "states.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t"] + [f"x{i}" for i in range(n)]
        for i in range(n):
            header += [f"x{i}_lo", f"x{i}_hi"]
        writer.writerow(header)
        for r, t in enumerate(ticks):
            lo, hi = state_bounds[t % spec.period]
            row = [str(t)] + [_fmt(cols[f"x{i}"][r]) for i in range(n)]
            for i in range(n):
                row += [bound_str(lo[i]), bound_str(hi[i])]
            writer.writerow(row)

    with open(run_dir / "inputs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t"] + [f"u{i}" for i in range(d)]
        for i in range(d):
            header += [f"u{i}_lo", f"u{i}_hi"]
        writer.writerow(header)
        for r, t in enumerate(ticks):
            lo, hi = input_bounds[t % spec.period]
            row = [str(t)] + [_fmt(cols[f"u{i}"][r]) for i in range(d)]
            for i in range(d):
                row += [bound_str(lo[i]), bound_str(hi[i])]
            writer.writerow(row)

    with open(run_dir / "cost.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "lmpc_cost"])
        for r, t in enumerate(ticks):
            writer.writerow([str(t), _fmt(cols["lmpc_cost"][r])])

    return list(SLICE_FILES)
