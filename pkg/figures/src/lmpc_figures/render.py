"""Render run figures from exported CSV slices.

Consumes the documented slice schema only (states.csv, inputs.csv, cost.csv
inside a run directory) and never recomputes controller quantities.  Output
is deterministic: fixed style, no timestamps or environment-dependent
metadata.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SLICE_FILES = ("states.csv", "inputs.csv", "cost.csv")


class SliceFormatError(ValueError):
    """The run directory does not carry the expected slice columns."""


@dataclass
class FigureSpec:
    """What to draw for one run: slice files, labels, overlays, output path."""

    states_file: Path
    inputs_file: Path
    cost_file: Path
    title: str
    out_path: Path
    dpi: int = 120


@dataclass
class RenderInfo:
    """What was actually drawn, for callers that want to verify the output."""

    path: Path
    cost_start_tick: int | None
    num_state_overlays: int
    num_input_overlays: int


def _read_columns(path: Path) -> dict[str, list[float]]:
    if not path.exists():
        raise SliceFormatError(f"missing slice file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols: dict[str, list[float]] = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(math.nan if v == "" else float(v))
    return cols


def _series_names(cols: dict, prefix: str) -> list[str]:
    names = []
    i = 0
    while f"{prefix}{i}" in cols:
        names.append(f"{prefix}{i}")
        i += 1
    if not names:
        raise SliceFormatError(f"no {prefix}* columns found; columns: {sorted(cols)}")
    return names


def _overlay(ax, t, cols, name: str) -> int:
    """Draw lower/upper bound staircases when present; returns overlays drawn."""
    drawn = 0
    for suffix, style in (("_lo", "--"), ("_hi", "--")):
        key = name + suffix
        if key not in cols:
            continue
        values = cols[key]
        if all(math.isnan(v) for v in values):
            continue
        ax.step(t, values, style, where="post", color="0.4", linewidth=0.9)
        drawn += 1
    return drawn


def render_figure(spec: FigureSpec) -> RenderInfo:
    states = _read_columns(spec.states_file)
    inputs = _read_columns(spec.inputs_file)
    cost = _read_columns(spec.cost_file)
    for cols, label in ((states, "states"), (inputs, "inputs"), (cost, "cost")):
        if "t" not in cols:
            raise SliceFormatError(f"{label} slice has no 't' column")
    if "lmpc_cost" not in cost:
        raise SliceFormatError("cost slice has no 'lmpc_cost' column")

    t_states = states["t"]
    fig, axes = plt.subplots(3, 1, figsize=(7.0, 7.5), sharex=True)

    state_overlays = 0
    for name in _series_names(states, "x"):
        axes[0].plot(t_states, states[name], linewidth=1.1, label=name)
        state_overlays += _overlay(axes[0], t_states, states, name)
    axes[0].set_ylabel("state")
    axes[0].legend(loc="upper right", fontsize=8)

    input_overlays = 0
    for name in _series_names(inputs, "u"):
        axes[1].plot(inputs["t"], inputs[name], linewidth=1.1, label=name)
        input_overlays += _overlay(axes[1], inputs["t"], inputs, name)
    axes[1].set_ylabel("input")
    axes[1].legend(loc="upper right", fontsize=8)

    cost_pairs = [(tt, v) for tt, v in zip(cost["t"], cost["lmpc_cost"])
                  if not math.isnan(v)]
    cost_start = int(cost_pairs[0][0]) if cost_pairs else None
    if cost_pairs:
        axes[2].plot([p[0] for p in cost_pairs], [p[1] for p in cost_pairs],
                     linewidth=1.1, color="tab:red")
    axes[2].set_ylabel("open-loop cost")
    axes[2].set_xlabel("t")

    axes[0].set_title(spec.title)
    fig.align_ylabels(axes)
    fig.tight_layout()
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path, dpi=spec.dpi, metadata={"Software": None})
    plt.close(fig)
    return RenderInfo(path=spec.out_path, cost_start_tick=cost_start,
                      num_state_overlays=state_overlays,
                      num_input_overlays=input_overlays)


def render_run(run_dir, out_dir) -> list[RenderInfo]:
    """Render one image per run directory holding exported slices."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    spec = FigureSpec(states_file=run_dir / "states.csv",
                      inputs_file=run_dir / "inputs.csv",
                      cost_file=run_dir / "cost.csv",
                      title=run_dir.name,
                      out_path=out_dir / f"{run_dir.name}.png")
    return [render_figure(spec)]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lmpc-figures",
        description="Render state/input/cost figures from exported run slices.")
    parser.add_argument("--run", action="append", required=True,
                        help="run directory with exported slices (repeatable)")
    parser.add_argument("--out", required=True, help="output directory for images")
    args = parser.parse_args(argv)
    try:
        for run in args.run:
            for info in render_run(run, args.out):
                print(f"wrote {info.path}")
    except SliceFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
