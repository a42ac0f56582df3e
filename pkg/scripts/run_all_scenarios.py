#!/usr/bin/env python3
"""Run all four builtin scenarios, export figure slices, and print a summary.
Outputs land in runs/<scenario>/ (override with --out)."""
import argparse
import json
import sys
from pathlib import Path

from periodic_lmpc import cli
from periodic_lmpc.scenarios import BUILTIN_NAMES


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs", help="parent output directory")
    parser.add_argument("--cycles", type=int, default=10)
    parser.add_argument("--timing", action="store_true",
                        help="record solve wall time (breaks reproducibility)")
    args = parser.parse_args()

    worst = 0
    for name in BUILTIN_NAMES:
        out = Path(args.out) / name
        run_args = ["run", "--scenario", name, "--cycles", str(args.cycles),
                    "--out", str(out)]
        if args.timing:
            run_args.append("--timing")
        code = cli.main(run_args)
        worst = max(worst, code)
        if code == 0:
            worst = max(worst, cli.main(["export-figures-data", "--run", str(out)]))

    print(f"\n{'scenario':<20} {'converged':>9} {'max viol':>10} {'max dJ':>10} "
          f"{'final cycle cost':>17}")
    for name in BUILTIN_NAMES:
        summary = Path(args.out) / name / "summary.json"
        if not summary.exists():
            continue
        data = json.loads(summary.read_text())
        props = data["properties"]
        conv = props["convergence_cycle"]
        print(f"{name:<20} {str(conv):>9} {props['max_constraint_violation']:>10.2e} "
              f"{props['max_cost_increase']:>10.2e} {data['per_cycle_cost'][-1]:>17.6f}")
    return worst


if __name__ == "__main__":
    sys.exit(main())
