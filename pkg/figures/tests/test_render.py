import csv
from pathlib import Path

import pytest

from lmpc_figures import SliceFormatError, render_run


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def synthetic_run(tmp_path: Path, name="demo", ticks=40, period=20,
                  with_bounds=True) -> Path:
    run = tmp_path / name
    run.mkdir()
    lo, hi = ("-0.5", "0.5") if with_bounds else ("", "")
    write_csv(run / "states.csv",
              ["t", "x0", "x1", "x0_lo", "x0_hi", "x1_lo", "x1_hi"],
              [[str(t), repr(0.01 * t), repr(-0.02 * t), lo, hi, "", ""]
               for t in range(ticks)])
    write_csv(run / "inputs.csv", ["t", "u0", "u0_lo", "u0_hi"],
              [[str(t), repr(0.1), "", ""] for t in range(ticks)])
    write_csv(run / "cost.csv", ["t", "lmpc_cost"],
              [[str(t), "" if t < period else repr(5.0 - 0.01 * t)]
               for t in range(ticks)])
    return run


def test_render_produces_image_and_metadata(tmp_path):
    run = synthetic_run(tmp_path)
    infos = render_run(run, tmp_path / "out")
    assert len(infos) == 1
    info = infos[0]
    assert info.path.exists()
    assert info.path.suffix == ".png"
    assert info.cost_start_tick == 20
    assert info.num_state_overlays == 2
    assert info.num_input_overlays == 0


def test_render_without_bounds_has_no_overlays(tmp_path):
    run = synthetic_run(tmp_path, name="plain", with_bounds=False)
    info = render_run(run, tmp_path / "out")[0]
    assert info.num_state_overlays == 0


def test_render_deterministic_bytes(tmp_path):
    run = synthetic_run(tmp_path)
    a = render_run(run, tmp_path / "a")[0].path.read_bytes()
    b = render_run(run, tmp_path / "b")[0].path.read_bytes()
    assert a == b


def test_missing_slice_fails_descriptively(tmp_path):
    run = synthetic_run(tmp_path, name="broken")
    (run / "inputs.csv").unlink()
    with pytest.raises(SliceFormatError, match="inputs.csv"):
        render_run(run, tmp_path / "out")


def test_missing_columns_fail_descriptively(tmp_path):
    run = synthetic_run(tmp_path, name="nocols")
    write_csv(run / "states.csv", ["t", "y0"], [["0", "1.0"]])
    with pytest.raises(SliceFormatError, match="x"):
        render_run(run, tmp_path / "out")


def test_cli_entry(tmp_path):
    from lmpc_figures.render import main
    run = synthetic_run(tmp_path)
    assert main(["--run", str(run), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "demo.png").exists()
    assert main(["--run", str(tmp_path / "missing"), "--out", str(tmp_path / "out")]) == 2
