#!/usr/bin/env python3
"""Operational sensitivity sweeps: initial inventory, sequencing, stage scheme.

Each axis gets its own consolidated sweep.csv under --out:
  initial_inventory  empty / half_full / full
  sequence_strategy  short_pattern / long_blocks / random
  sequence_order     high_start / low_start
  stage_scheme       per_bale / combined / detailed:3
  target_rate        a 1.0 .. 4.0 dt/hr ladder for the rate curves
"""

import argparse
import sys
from pathlib import Path

from feedline.cli import main as cli_main

AXES = {
    "initial_inventory": "empty,half_full,full",
    "sequence_strategy": "short_pattern,long_blocks,random",
    "sequence_order": "high_start,low_start",
    "stage_scheme": "per_bale,combined,detailed:3",
    "target_rate": "1.0,1.5,2.0,2.5,2.95,3.5,4.0",
}


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out/operations")
    ap.add_argument("--config", default=None)
    ap.add_argument("--nt", type=int, default=100)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--axes", default=",".join(AXES),
                    help="comma-separated subset of the supported axes")
    args = ap.parse_args()

    repo = Path(__file__).resolve().parents[1]
    config = args.config or str(repo / "configs" / "base_case.toml")
    for axis in args.axes.split(","):
        rc = cli_main([
            "sweep", "--config", config, "--axis", axis,
            "--values", AXES[axis],
            "--out", f"{args.out}/{axis}",
            "--nt", str(args.nt), "--workers", str(args.workers),
            "--seed", "0",
        ])
        if rc:
            return rc
        print(f"{axis}: wrote {args.out}/{axis}/sweep.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
