"""Standardized diagonal-estimate errors on the four-level scaling design.

Prints the summary statistics and, with ``--hist``, a text histogram of the
z-scores against the standard normal density.
"""

import argparse
import math

import numpy as np

from randalo.experiments import clt_diagnostics, clt_design


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--p", type=int, default=150)
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--hist", action="store_true")
    args = ap.parse_args(argv)

    diag = clt_diagnostics(clt_design(args.n, args.p, args.seed), probes=args.trials, m=args.m, seed=args.seed)
    for k, v in diag.summary().items():
        print(f"{k:>22s} {v: .6f}")
    if args.hist:
        edges = np.linspace(-4, 4, 33)
        counts, _ = np.histogram(diag.z_scores.ravel(), edges)
        dens = counts / (diag.z_scores.size * (edges[1] - edges[0]))
        for lo, d in zip(edges[:-1], dens):
            mid = lo + (edges[1] - edges[0]) / 2
            ref = math.exp(-mid * mid / 2) / math.sqrt(2 * math.pi)
            print(f"{mid:+5.2f} {d:.3f} {ref:.3f} {'#' * int(round(100 * d))}")


if __name__ == "__main__":
    main()
