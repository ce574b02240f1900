#!/usr/bin/env python3
"""Bale-mix x target-rate grid: five mixes at each of three reactor rates.

One consolidated CSV per rate under --out, mirroring the mixing-ratio
comparison tables (all-low and all-high rows bracket the three mixed fleets).
"""

import argparse
import sys
from pathlib import Path

from feedline.cli import main as cli_main

# low/med/high shares in percent
MIXES = ["100/0/0", "60/20/20", "20/60/20", "20/20/60", "0/0/100"]
RATES = ["2.50", "2.72", "2.95"]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out/mix_rate")
    ap.add_argument("--config", default=None)
    ap.add_argument("--nt", type=int, default=100)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    repo = Path(__file__).resolve().parents[1]
    config = args.config or str(repo / "configs" / "base_case.toml")
    for rate in RATES:
        rc = cli_main([
            "sweep", "--config", config, "--axis", "mix",
            "--values", ",".join(MIXES),
            "--out", f"{args.out}/rate_{rate}",
            "--nt", str(args.nt), "--workers", str(args.workers),
            "--seed", "0",
        ])
        if rc:
            return rc
        print(f"rate {rate}: wrote {args.out}/rate_{rate}/sweep.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
