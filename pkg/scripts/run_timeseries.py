#!/usr/bin/env python3
"""Historical time-series experiment over a monthly price/dividend CSV.

    python scripts/run_timeseries.py --input data/sp500_monthly.csv --start 1990-01 --end 2020-12

The CSV needs the header ``date,price,dividend`` with ``YYYY-MM`` dates. Without
``--discount`` the discount rate is calibrated so the mean fundamental matches
the mean price over the file.
"""

import argparse
import sys

from llm_ham.cli import main


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--input", required=True)
    p.add_argument("--start")
    p.add_argument("--end")
    p.add_argument("--growth", type=float, default=0.0058)
    p.add_argument("--discount", type=float)
    p.add_argument("--backend", default="oracle", choices=["oracle", "replay", "remote"])
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--out", default="results/timeseries")
    p.add_argument("--allow-network", action="store_true")
    return p.parse_args(argv)


def run(args) -> int:
    argv = ["run-timeseries", "--input", args.input, "--backend", args.backend, "--reps", str(args.reps),
            "--growth", str(args.growth), "--out", args.out]
    for flag, value in (("--start", args.start), ("--end", args.end)):
        if value:
            argv += [flag, value]
    argv += ["--discount", str(args.discount)] if args.discount is not None else ["--calibrate"]
    if args.allow_network:
        argv.append("--allow-network")
    return main(argv)


if __name__ == "__main__":
    sys.exit(run(parse_args()))
