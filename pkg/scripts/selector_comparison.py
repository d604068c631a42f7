#!/usr/bin/env python3
"""Selector benchmark across sample sizes: mean AMSE and selected weights.

Reproduces the benchmark layout (one column block per selector, rows for
AMSE and the mean selected weights) for several subject counts in one go.
"""

import argparse
import os
import time

from vcm.io import write_csv
from vcm.selection import lambda_axis
from vcm.simulation import SimDesign, run_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="10,25,50,100",
                    help="comma list of subject counts")
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--criteria", default="gic,gbic,cv")
    ap.add_argument("--grid", default="1e-6:1e2:9")
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--gbic-variant", choices=["printed", "rederived"],
                    default="rederived")
    ap.add_argument("--no-intercept", action="store_true")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="selector_comparison.csv")
    args = ap.parse_args()

    lo, hi, num = args.grid.split(":")
    axis = lambda_axis(float(lo), float(hi), int(num))
    criteria = tuple(c.strip() for c in args.criteria.split(","))

    all_rows = []
    for n in (int(v) for v in args.sizes.split(",")):
        t0 = time.perf_counter()
        design = SimDesign(n=n, seed=args.seed, replications=args.reps)
        result = run_comparison(design, criteria=criteria, grid=axis,
                                folds=args.folds,
                                include_intercept=not args.no_intercept,
                                gbic_variant=args.gbic_variant,
                                n_jobs=args.threads)
        for row in result.rows():
            all_rows.append([f"n={n}"] + row)
        amse = " ".join(f"{c}={result.mean_amse[c]:.6g}" for c in criteria)
        print(f"n={n}: {amse} failures={result.failures} "
              f"[{time.perf_counter() - t0:.0f}s]")
    write_csv(args.out, ["design", "metric"] + list(criteria), all_rows,
              comment=f"selector comparison seed={args.seed} reps={args.reps} "
                      f"grid={args.grid} gbic={args.gbic_variant}")
    print(f"table -> {args.out}")


if __name__ == "__main__":
    main()
