#!/usr/bin/env python3
"""Artificial-market grid at one or more current-price levels.

    python scripts/run_grid.py --backend oracle --pt 833 1333 1833 --out results/grid

Each level lands in its own subdirectory with the four tables and heatmaps.
"""

import argparse
import sys
from pathlib import Path

from llm_ham.cli import main


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--backend", default="oracle", choices=["oracle", "replay", "remote"])
    p.add_argument("--pt", type=float, nargs="+", default=[1333.0])
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--variant", default="COMPOSITION_V0")
    p.add_argument("--out", default="results/grid")
    p.add_argument("--allow-network", action="store_true")
    return p.parse_args(argv)


def run(args) -> int:
    status = 0
    for p_t in args.pt:
        out = Path(args.out) / f"pt{p_t:g}"
        argv = ["run-grid", "--backend", args.backend, "--pt", str(p_t), "--reps", str(args.reps),
                "--variant", args.variant, "--out", str(out)]
        if args.allow_network:
            argv.append("--allow-network")
        status = max(status, main(argv))
    return status


if __name__ == "__main__":
    sys.exit(run(parse_args()))
