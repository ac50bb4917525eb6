#!/usr/bin/env python3
"""Linear-mixed-model benchmark against the closed-form posterior.

Runs the minibatch Langevin sampler over a grid of batch sizes and step
exponents on the Gaussian random-intercept-and-slope design with known
variance components, applies the covariance correction to every chain, and
summarizes log posterior variances and predictive variance ratios against
the conjugate closed form.

Desk-scale defaults finish in a few minutes. The full-scale study uses
--replications 20 --time-budget 100 on the same grid.
"""

import argparse
import os

from glmm_sgld.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100, help="subjects")
    ap.add_argument("--n-i", dest="n_i", type=int, default=10, help="rows per subject")
    ap.add_argument("--replications", type=int, default=5)
    ap.add_argument("--batch-sizes", default="1,5,10")
    ap.add_argument("--deltas", default="0.3,0.55,1.0")
    ap.add_argument("--time-budget", dest="time_budget", type=float, default=40.0,
                    help="continuous-time budget T per chain")
    ap.add_argument("--inner-draws", dest="inner_draws", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    ap.add_argument("--output-dir", dest="output_dir", default="runs/lmm")
    args = ap.parse_args()

    return cli_main([
        "bench",
        "--design", "lmm-fixed",
        "--n", str(args.n),
        "--n-i", str(args.n_i),
        "--replications", str(args.replications),
        "--batch-sizes", args.batch_sizes,
        "--deltas", args.deltas,
        "--time-budget", str(args.time_budget),
        "--inner-draws", str(args.inner_draws),
        "--seed", str(args.seed),
        "--workers", str(args.workers),
        "--output-dir", args.output_dir,
        "--no-keep-chains",
    ])


if __name__ == "__main__":
    raise SystemExit(main())
