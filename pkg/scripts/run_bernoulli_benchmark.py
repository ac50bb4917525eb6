#!/usr/bin/env python3
"""Logistic mixed-model benchmark against a full-data Gibbs comparator.

Runs the minibatch Langevin sampler on the random-intercept-and-slope
logistic design (all variance components free), applies the covariance
correction, and compares posterior variances against a Polya-Gamma Gibbs
sampler that sees the full dataset every sweep.

Desk-scale defaults finish in a few minutes. The full-scale study uses
--n 500 --gibbs-sweeps 50000 --replications 5.
"""

import argparse
import os

from glmm_sgld.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=60, help="subjects")
    ap.add_argument("--n-i", dest="n_i", type=int, default=10, help="rows per subject")
    ap.add_argument("--replications", type=int, default=3)
    ap.add_argument("--batch-sizes", default="5")
    ap.add_argument("--deltas", default="0.65")
    ap.add_argument("--time-budget", dest="time_budget", type=float, default=40.0)
    ap.add_argument("--inner-draws", dest="inner_draws", type=int, default=100)
    ap.add_argument("--gibbs-sweeps", dest="gibbs_sweeps", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    ap.add_argument("--output-dir", dest="output_dir", default="runs/bernoulli")
    args = ap.parse_args()

    return cli_main([
        "bench",
        "--design", "bernoulli",
        "--n", str(args.n),
        "--n-i", str(args.n_i),
        "--replications", str(args.replications),
        "--batch-sizes", args.batch_sizes,
        "--deltas", args.deltas,
        "--time-budget", str(args.time_budget),
        "--inner-draws", str(args.inner_draws),
        "--gibbs-sweeps", str(args.gibbs_sweeps),
        "--seed", str(args.seed),
        "--workers", str(args.workers),
        "--output-dir", args.output_dir,
        "--no-keep-chains",
    ])


if __name__ == "__main__":
    raise SystemExit(main())
