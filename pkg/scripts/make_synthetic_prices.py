#!/usr/bin/env python3
"""Write a synthetic monthly ``date,price,dividend`` file for trying the time-series pipeline.

The series is a geometric random walk with a slowly growing dividend. It is not
market data; use it only to exercise the code path.
"""

import argparse
import csv
import math
import random


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="synthetic_prices.csv")
    p.add_argument("--first", default="1989-12", help="first month, YYYY-MM")
    p.add_argument("--months", type=int, default=373, help="the default ends in 2020-12")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = random.Random(args.seed)
    price, dividend = 330.0, 1.0
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "price", "dividend"])
        y0, m0 = (int(x) for x in args.first.split("-"))
        for k in range(args.months):
            year, month = y0 + (m0 - 1 + k) // 12, (m0 - 1 + k) % 12 + 1
            w.writerow([f"{year:04d}-{month:02d}", f"{price:.2f}", f"{dividend:.4f}"])
            price *= math.exp(rng.gauss(0.006, 0.043))
            dividend *= 1.004
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
