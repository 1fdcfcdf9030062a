#!/usr/bin/env python3
"""Robustness sweeps around the baseline grid, one axis at a time.

    python scripts/run_sweeps.py --backend oracle --out results/sweeps
    python scripts/run_sweeps.py --sweep temperature --backend remote --allow-network

Runs shared between sweeps (same parameters) are executed once. Transcripts
are kept per run, so an interrupted sweep resumes where it stopped.
"""

import argparse
import sys

from llm_ham.cli import main
from llm_ham.experiments import GridSpec, expand_matrix, standard_sweeps


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--sweep", default="all", choices=sorted(standard_sweeps()) + ["all"])
    p.add_argument("--backend", default="oracle", choices=["oracle", "replay", "remote"])
    p.add_argument("--out", default="results/sweeps")
    p.add_argument("--dry-run", action="store_true", help="list the runs and exit")
    p.add_argument("--allow-network", action="store_true")
    return p.parse_args(argv)


def run(args) -> int:
    if args.dry_run:
        sweeps = standard_sweeps()
        names = sorted(sweeps) if args.sweep == "all" else [args.sweep]
        for name in names:
            for r in expand_matrix(sweeps[name], GridSpec()):
                print(f"{name:16s} {r.run_id}")
        return 0
    argv = ["run-matrix", "--kind", "grid", "--sweep", args.sweep, "--backend", args.backend, "--out", args.out]
    if args.allow_network:
        argv.append("--allow-network")
    return main(argv)


if __name__ == "__main__":
    sys.exit(run(parse_args()))
