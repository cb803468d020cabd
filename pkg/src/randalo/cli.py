"""Command-line front end.

Subcommands: ``estimate`` (fit a model and run risk estimators), ``bench``
(run a named experiment), ``print-config`` (defaults as JSON) and
``ingest-check`` (parse a data file and report its shape).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import alo
from .config import RunConfig, cli_error, load_config
from .errors import RandALOError
from .experiments import EXPERIMENTS, ResultRow, run_experiment, summarize
from .experiments.synthetic import SyntheticSpec, conditional_risk, generate
from .io import ingest, write_rows
from .jacobian import build_oracle
from .linops import SolverConfig
from .model import fit
from .model import penalties as pen
from .model.kernel import KERNELS, fit_kernel

log = logging.getLogger("randalo")


def resolve_threads(flag):
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("RANDALO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise cli_error(f"RANDALO_THREADS must be an integer, got {env!r}") from None
    return 1


def penalty_weight(spec, n):
    return math.sqrt(n) if spec.lam is None else float(spec.lam)


def build_regularizer(spec, p, lam):
    if spec.penalty == "ridge":
        return pen.ridge(lam)
    if spec.penalty == "lasso":
        return pen.elastic_net(lam, spec.theta) if spec.theta else pen.lasso(lam)
    if spec.penalty == "elastic_net":
        return pen.elastic_net(lam, spec.theta)
    if spec.penalty == "first_difference":
        reg = pen.first_difference(lam, p)
        return pen.Regularizer(reg.terms + (pen.SquaredL2(spec.theta),)) if spec.theta else reg
    if spec.penalty == "group_lasso":
        if spec.groups is not None:
            groups = [list(g) for g in spec.groups]
        elif spec.group_size:
            groups = pen.contiguous_groups(p, spec.group_size)
        else:
            raise cli_error("model.groups or model.group_size is required for group_lasso")
        return pen.group_lasso(lam, groups, spec.theta)
    raise cli_error(f"model.penalty: {spec.penalty!r} has no linear-model regularizer")


def load_data(cfg):
    """Dataset plus (beta_star, family params) when the data is synthetic."""
    if cfg.data.path:
        return ingest(cfg.data.path, cfg.data.format), None
    spec = SyntheticSpec(cfg.data.family, n=cfg.data.n, p=cfg.data.p, seed=cfg.data.seed).resolved()
    data, beta, meta = generate(spec)
    return data, (beta, spec)


def _param(method, cfg):
    if method in ("randalo", "bks_alo"):
        return f"m={cfg.estimator.m}"
    if method == "kfold_cv":
        return f"K={cfg.estimator.K}"
    return "-"


def cmd_estimate(cfg, threads=1):
    """Fit the configured model and run each requested estimator; returns result rows."""
    cfg.validate()
    data, truth = load_data(cfg)
    est = cfg.estimator
    risk_kind = est.risk or ("misclassification" if cfg.model.loss == "logistic" else "squared_error")
    solver = SolverConfig(cfg.solver.abs_tol, cfg.solver.rel_tol, cfg.solver.max_iter, cfg.solver.method)
    kernel = cfg.model.penalty == "kernel_ridge"
    lam = penalty_weight(cfg.model, data.n)

    t0 = time.perf_counter()
    if kernel:
        if cfg.model.kernel not in KERNELS:
            raise cli_error(f"model.kernel: unknown kernel {cfg.model.kernel!r}")
        X = data.X.toarray() if data.sparse else data.X
        K = KERNELS[cfg.model.kernel](X, gamma=cfg.model.gamma) if cfg.model.kernel == "rbf" else KERNELS["linear"](X)
        model = fit_kernel(K, data.y, cfg.model.loss, lam)
        reg = None
    else:
        reg = build_regularizer(cfg.model, data.p, lam)
        model = fit(data, cfg.model.loss, reg)
    fit_time = time.perf_counter() - t0

    ref = None
    if truth is not None and not kernel:
        beta, spec = truth
        try:
            ref = conditional_risk(spec.family, beta, model.coef, {"noise": spec.noise, "k": spec.k, "rho": spec.rho})
        except RandALOError:
            ref = None

    oracle = None
    rows = []
    y, yhat = data.y, model.predictions
    for method in est.methods:
        if method in ("randalo", "bks_alo", "exact_alo") and oracle is None:
            oracle = build_oracle(model, None if kernel else data, cfg=solver)
        if method == "randalo":
            rep = alo.randalo(y, yhat, oracle, model.loss, risk_kind, est.m, est.seed, est.subset_schedule, threads)
        elif method == "bks_alo":
            rep = alo.bks_alo(y, yhat, oracle, model.loss, risk_kind, est.m, est.seed, threads)
        elif method == "exact_alo":
            rep = alo.exact_alo(y, yhat, oracle, model.loss, risk_kind)
        elif method in ("kfold_cv", "loo_cv"):
            folds = data.n if method == "loo_cv" else est.K
            if kernel:
                rep = alo.kfold_cv_kernel(K, y, model.loss, lam, risk_kind, folds, est.seed)
            else:
                rep = alo.kfold_cv(data, None, model.loss, reg, risk_kind, folds, est.seed)
        elif method == "ridge_loo":
            if kernel or cfg.model.penalty != "ridge" or cfg.model.loss != "squared":
                raise cli_error("estimator.methods: ridge_loo needs squared loss with a ridge penalty")
            t1 = time.perf_counter()
            loo = alo.ridge_loo_shortcut(data, y, lam)
            rep = alo.RiskReport(alo.plugin_risk(y, loo, risk_kind), 0.0, [], "ridge_loo",
                                 {"solves": 1, "time": time.perf_counter() - t1, "warnings": []}, loo)
        else:
            raise cli_error(f"estimator.methods: unknown method {method!r}")
        rows.append(_row(cfg.name, est.seed, method, _param(method, cfg), rep, ref, fit_time))
    return rows


def _row(name, seed, method, param, rep, ref, fit_time):
    t = rep.diagnostics.get("time")
    est = float(rep.estimate)
    return ResultRow(
        experiment=name,
        seed=seed,
        method=method,
        parameter=param,
        risk_estimate=est,
        conditional_risk=ref,
        relative_bias=(est - ref) / ref if ref else None,
        solve_count=int(rep.diagnostics.get("solves", 0)),
        work=rep.diagnostics.get("work"),
        warnings="; ".join(rep.warnings),
        wall_time=t,
        relative_time=t / fit_time if (t is not None and fit_time) else None,
    )


def _write_summary(summary, path):
    text = "\n".join(json.dumps(s) for s in summary) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _summary_path(output):
    if output in (None, "-"):
        return None
    stem, _ = os.path.splitext(output)
    return stem + ".summary.jsonl"


def build_parser():
    ap = argparse.ArgumentParser(prog="randalo", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: $RANDALO_THREADS or 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit a model and estimate its risk")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--output", help="result table path ('-' for stdout)")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.add_argument("--timing", action="store_true", help="put wall times in the data rows")

    p = sub.add_parser("bench", help="run a named experiment")
    p.add_argument("experiment", choices=sorted(EXPERIMENTS))
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--output", help="result table path ('-' for stdout)")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--K", type=int, nargs="+", help="override the fold counts")
    p.add_argument("--m", type=int, nargs="+", help="override the probe counts")

    p = sub.add_parser("print-config", help="print the default (or given) configuration")
    p.add_argument("--config")

    p = sub.add_parser("ingest-check", help="parse a data file and report its shape")
    p.add_argument("path")
    p.add_argument("--format", choices=("dense_csv", "svmlight_sparse"))
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = resolve_threads(getattr(args, "threads", None))
        if args.command == "print-config":
            cfg = load_config(args.config) if args.config else RunConfig()
            print(cfg.dumps())
            return 0
        if args.command == "ingest-check":
            data = ingest(args.path, args.format)
            nnz = data.X.nnz if data.sparse else int(np.count_nonzero(data.X))
            print(json.dumps({"n": data.n, "p": data.p, "storage": data.storage, "nnz": nnz}))
            return 0
        if args.command == "estimate":
            cfg = load_config(args.config) if args.config else RunConfig()
            if args.output:
                cfg.output.path = args.output
            if args.format:
                cfg.output.format = args.format
            timing = args.timing or cfg.output.timing
            if cfg.threads is not None and getattr(args, "threads", None) is None and "RANDALO_THREADS" not in os.environ:
                threads = cfg.threads
            rows = cmd_estimate(cfg, threads)
            write_rows(rows, cfg.output.path or "-", cfg.output.format, timing, {"config": cfg.name})
            return 0
        if args.command == "bench":
            if not args.scale > 0:
                raise cli_error("--scale must be positive")
            if args.seeds < 1:
                raise cli_error("--seeds must be at least 1")
            rows = run_experiment(args.experiment, args.scale, args.seeds, None, threads, args.K, args.m)
            write_rows(rows, args.output or "-", args.format, args.timing,
                       {"experiment": args.experiment, "scale": args.scale, "seeds": args.seeds})
            summary = summarize(rows)
            _write_summary(summary, _summary_path(args.output) if args.output not in (None, "-") else "-")
            return 0
    except RandALOError as exc:
        print(f"error [{exc.module}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
