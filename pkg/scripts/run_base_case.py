#!/usr/bin/env python3
"""Train the base case and compare the three models on shared paths.

Writes compare.csv / compare_trajectories.csv under --out.  At the shipped
defaults (N_t = 500, S_S = 1000, S_V = 500) this is the full-size experiment;
pass --nt 100 for a quicker desk-scale run with the same qualitative results.
"""

import sys
from pathlib import Path

from feedline.cli import main

if __name__ == "__main__":
    repo = Path(__file__).resolve().parents[1]
    args = sys.argv[1:]
    if "--config" not in args:
        args = ["--config", str(repo / "configs" / "base_case.toml")] + args
    if "--out" not in args:
        args += ["--out", "out/base_case"]
    sys.exit(main(["compare"] + args))
