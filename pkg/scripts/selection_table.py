"""How often each estimator ranks lam0 = 10 below lam0 = 15 on the sparse high-dimensional lasso.

Default size is n = 1000, p = 5000, s = 50 (scale 0.2 of the sweep experiment).
"""

import argparse

from randalo.experiments import run_experiment, selection_counts


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=0.2)
    ap.add_argument("--seeds", type=int, default=30)
    ap.add_argument("--m", type=int, nargs="+", default=[20, 50, 100])
    ap.add_argument("--K", type=int, nargs="+", default=[2, 5, 10])
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    rows = run_experiment("hyperparam_sweep", args.scale, args.seeds, threads=args.threads, Ks=args.K, ms=args.m)
    counts = selection_counts(rows)
    print(f"{'method':<12s} {'setting':<8s} {'lam0=10':>8s} {'lam0=15':>8s}")
    for (method, setting), (a, b) in sorted(counts.items()):
        print(f"{method:<12s} {setting:<8s} {a:>8d} {b:>8d}")


if __name__ == "__main__":
    main()
