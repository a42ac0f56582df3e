"""Command-line entry point: run scenarios, verify properties, export plot data.

Exit code contract: 0 success, 1 property violation or runtime failure,
2 usage/config error.  Default outputs are byte-reproducible; pass --timing
to include per-tick solve wall time in trajectory.csv (at the cost of
reproducibility).
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import export
from .model import PeriodicTrajectory, SeedValidationError
from .scenarios import (BUILTIN_NAMES, ScenarioConfig, ScenarioError, builtin,
                        load_scenario, make_seed, save_scenario)
from .simulation import run_closed_loop, verify_properties

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2


def _resolve_scenario(ref: str) -> ScenarioConfig:
    if ref in BUILTIN_NAMES:
        return builtin(ref)
    path = Path(ref)
    if not path.exists():
        raise ScenarioError(f"scenario {ref!r} is neither a builtin name nor an existing file")
    return load_scenario(path)


def _read_seed_csv(path, n: int, d: int) -> PeriodicTrajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    xcols = [header.index(f"x{i}") for i in range(n)]
    ucols = [header.index(f"u{i}") for i in range(d)]
    states = np.array([[float(r[c]) for c in xcols] for r in rows])
    inputs = np.array([[float(r[c]) if r[c] != "" else 0.0 for c in ucols] for r in rows[:-1]])
    return PeriodicTrajectory(states=states, inputs=inputs)


def _out_dir(args, cfg_name: str) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("PERIODIC_LMPC_OUT")
    if env:
        return Path(env) / cfg_name
    return Path("runs") / cfg_name


def _execute(cfg: ScenarioConfig, cycles: int, seed_override: str | None):
    if seed_override:
        seed = _read_seed_csv(seed_override, cfg.spec.state_dim, cfg.spec.input_dim)
        seed.validate(cfg.spec)
    else:
        seed = make_seed(cfg)
    log = run_closed_loop(cfg.spec, seed, cycles)
    report = verify_properties(log, cfg.spec)
    return log, report


def cmd_run(args) -> int:
    try:
        cfg = _resolve_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            export.write_manifest(out / export.MANIFEST_FILE, args.scenario, "", [],
                                  EXIT_USAGE, None, error=str(exc))
        return EXIT_USAGE

    cycles = args.cycles if args.cycles is not None else cfg.cycles
    out = _out_dir(args, cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    shash = export.settings_hash({"scenario": args.scenario, "cycles": cycles,
                                  "timing": bool(args.timing),
                                  "seed_override": args.seed_override or ""})
    try:
        log, report = _execute(cfg, cycles, args.seed_override)
    except (SeedValidationError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        export.write_manifest(out / export.MANIFEST_FILE, cfg.name, shash, [],
                              EXIT_VIOLATION, None, error=str(exc))
        return EXIT_VIOLATION

    export.write_trajectory_csv(log, out / export.TRAJECTORY_FILE, timing=args.timing)
    summary = export.run_summary(cfg.name, cycles, log, report)
    export.write_json(summary, out / export.SUMMARY_FILE)
    save_scenario(cfg, out / export.SCENARIO_FILE)
    status = EXIT_OK if report.all_passed() else EXIT_VIOLATION
    outputs = [export.TRAJECTORY_FILE, export.SUMMARY_FILE, export.SCENARIO_FILE]
    export.write_manifest(out / export.MANIFEST_FILE, cfg.name, shash, outputs,
                          status, report.to_dict())
    conv = report.convergence_cycle
    print(f"{cfg.name}: {cycles} cycles, converged at cycle "
          f"{conv if conv is not None else 'never'}, "
          f"max violation {report.max_constraint_violation:.2e}, "
          f"outputs in {out}")
    return status


def _check_one(ref: str, cycles_arg: int | None, seed_override: str | None):
    cfg = _resolve_scenario(ref)
    cycles = cycles_arg if cycles_arg is not None else cfg.cycles
    log, report = _execute(cfg, cycles, seed_override)
    return cfg.name, report


def cmd_check(args) -> int:
    refs = args.scenario or list(BUILTIN_NAMES)
    results = []
    try:
        if args.jobs > 1 and len(refs) > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_check_one, r, args.cycles, args.seed_override)
                           for r in refs]
                results = [f.result() for f in futures]
        else:
            results = [_check_one(r, args.cycles, args.seed_override) for r in refs]
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SeedValidationError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION

    print(f"{'scenario':<20} {'check':<26} {'value':>12} {'tolerance':>10}  status")
    all_ok = True
    for name, report in results:
        for check, info in report.checks().items():
            value = info["value"]
            vtxt = "n/a" if value is None else f"{value:.3e}"
            if not info["applicable"]:
                verdict = "SKIP"
            elif info["passed"]:
                verdict = "PASS"
            else:
                verdict = "FAIL"
                all_ok = False
            print(f"{name:<20} {check:<26} {vtxt:>12} {info['tolerance']:>10.1e}  {verdict}")
    return EXIT_OK if all_ok else EXIT_VIOLATION


def cmd_export_figures_data(args) -> int:
    run_dir = Path(args.run)
    traj = run_dir / export.TRAJECTORY_FILE
    scenario = run_dir / export.SCENARIO_FILE
    if not traj.exists() or not scenario.exists():
        print(f"error: {run_dir} is not a completed run directory "
              f"(needs {export.TRAJECTORY_FILE} and {export.SCENARIO_FILE})", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_scenario(scenario)
        written = export.write_figure_slices(run_dir, cfg.spec)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {', '.join(written)} in {run_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="periodic-lmpc",
        description="Learning MPC for periodic tasks: run scenarios, check "
                    "closed-loop properties, export figure data.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write run artifacts")
    run.add_argument("--scenario", required=True, help="builtin name or scenario file path")
    run.add_argument("--cycles", type=int, default=None, help="number of cycles (default 10)")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--seed-override", default=None, help="CSV file with a seed trajectory")
    run.add_argument("--timing", action="store_true",
                     help="include solve wall time in trajectory.csv (not reproducible)")
    run.set_defaults(fn=cmd_run)

    check = sub.add_parser("check", help="run the closed-loop property suite")
    check.add_argument("--scenario", action="append", default=None,
                       help="scenario to check (repeatable; default: all builtins)")
    check.add_argument("--cycles", type=int, default=None)
    check.add_argument("--seed-override", default=None)
    check.add_argument("--jobs", type=int, default=1,
                       help="run independent scenarios concurrently")
    check.set_defaults(fn=cmd_check)

    exp = sub.add_parser("export-figures-data",
                         help="write per-figure CSV slices from a completed run")
    exp.add_argument("--run", required=True, help="run directory from `run`")
    exp.set_defaults(fn=cmd_export_figures_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
