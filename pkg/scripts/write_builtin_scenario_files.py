#!/usr/bin/env python3
"""Regenerate the shipped scenario files from the builtin definitions."""
from pathlib import Path

from periodic_lmpc.scenarios import BUILTIN_NAMES, builtin, save_scenario

out_dir = Path(__file__).resolve().parent.parent / "scenarios"
out_dir.mkdir(exist_ok=True)
for name in BUILTIN_NAMES:
    path = out_dir / f"{name}.cfg"
    save_scenario(builtin(name), path)
    print(f"wrote {path}")
