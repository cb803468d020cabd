"""Experiment grid: each seed generates data, fits once, and runs every estimator."""

from __future__ import annotations

import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..alo import bks_alo, exact_alo, kfold_cv, randalo
from ..errors import InvalidSpec, RandALOError
from ..jacobian import build_oracle
from ..model import fit
from ..model import penalties as pen
from .clt import clt_design, clt_diagnostics
from .synthetic import SyntheticSpec, conditional_risk, generate, model_for

log = logging.getLogger(__name__)

EXACT_MAX_N = 2000


@dataclass
class ResultRow:
    experiment: str
    seed: int
    method: str
    parameter: str
    risk_estimate: float | None
    conditional_risk: float | None = None
    relative_bias: float | None = None
    solve_count: int = 0
    work: float | None = None
    warnings: str = ""
    wall_time: float | None = None
    relative_time: float | None = None

    DATA_FIELDS = (
        "experiment", "seed", "method", "parameter", "risk_estimate", "conditional_risk",
        "relative_bias", "solve_count", "work", "warnings",
    )
    TIMING_FIELDS = ("wall_time", "relative_time")

    def record(self, timing=False):
        d = asdict(self)
        keys = self.DATA_FIELDS + (self.TIMING_FIELDS if timing else ())
        return {k: d[k] for k in keys}

    def key(self):
        return (self.experiment, self.seed, self.method, _natural(self.parameter))


def _natural(s):
    return tuple(float(t) if re.fullmatch(r"[-+]?\d+(\.\d*)?", t) else t for t in re.split(r"([-+]?\d+(?:\.\d*)?)", s) if t)


@dataclass(frozen=True)
class ExperimentDef:
    family: str
    n: int
    p: int | None = None
    s: int | None = None
    noise: float | None = None
    Ks: tuple = (5,)
    ms: tuple = (50,)
    sizes: tuple = ()  # extra problem sizes (n = p) swept by scaling experiments
    lam0: tuple = ()  # lasso weights lam0 / sqrt(p) in per-sample units
    extra: dict = field(default_factory=dict)


EXPERIMENTS = {
    "lasso_tradeoff": ExperimentDef("gaussian_lasso", 5000, Ks=(2, 3, 5, 10, 20), ms=(10, 30, 100, 300, 1000, 3000)),
    "lasso_scaling": ExperimentDef("gaussian_lasso", 1000, sizes=(1000, 2000, 5000, 10000)),
    "first_diff": ExperimentDef("first_difference", 500, sizes=(500, 1000, 2000)),
    "logistic_ridge": ExperimentDef("logistic_ridge", 10000, p=4000),
    "multivariate_t": ExperimentDef("multivariate_t", 5000),
    "categorical": ExperimentDef("categorical", 2000, extra={"k": 10}),
    "hyperparam_sweep": ExperimentDef(
        "gaussian_lasso", 5000, p=25000, s=250, noise=2.0, Ks=(2, 5, 10), ms=(20, 50, 100),
        lam0=(5.0, 7.5, 10.0, 12.5, 15.0, 20.0, 25.0, 30.0),
    ),
    "clt_validation": ExperimentDef("clt", 200, p=150, ms=(10,), extra={"trials": 1000}),
}


def sweep_lambda(lam0, n, p):
    """Penalty weight for ``lam0 / sqrt(p)`` stated per sample (loss averaged over n)."""
    return n * lam0 / math.sqrt(p)


def _row(exp, seed, method, param, report, risk, fit_time):
    est = float(report.estimate)
    rel = (est - risk) / risk if risk else None
    t = report.diagnostics.get("time")
    return ResultRow(
        experiment=exp,
        seed=seed,
        method=method,
        parameter=param,
        risk_estimate=est,
        conditional_risk=risk,
        relative_bias=rel,
        solve_count=int(report.diagnostics.get("solves", 0)),
        work=report.diagnostics.get("work"),
        warnings="; ".join(report.diagnostics.get("warnings", [])),
        wall_time=t,
        relative_time=(t / fit_time) if (t is not None and fit_time) else None,
    )


def evaluate_instance(exp, seed, spec, reg=None, Ks=(5,), ms=(50,), exact=None, tag="", threads=1):
    """Fit one generated dataset and run the estimator grid on it."""
    data, beta_star, meta = generate(spec)
    loss, default_reg, phi = model_for(spec)
    reg = reg or default_reg
    t0 = time.perf_counter()
    model = fit(data, loss, reg)
    fit_time = time.perf_counter() - t0
    rs = spec.resolved()
    risk = conditional_risk(rs.family, beta_star, model.coef, {"noise": rs.noise, "k": rs.k, "rho": rs.rho})
    prefix = f"{tag};" if tag else ""
    rows = [
        ResultRow(exp, seed, "conditional", prefix.rstrip(";") or "-", risk, risk, 0.0, 0, 0.0, "",
                  fit_time, 1.0)
    ]
    oracle = build_oracle(model, data)
    y, yhat = data.y, model.predictions
    for K in Ks:
        rep = kfold_cv(data, None, loss, reg, phi, K=K, seed=seed)
        rows.append(_row(exp, seed, "kfold_cv", f"{prefix}K={K}", rep, risk, fit_time))
    for m in ms:
        rep = bks_alo(y, yhat, oracle, loss, phi, m=m, seed=seed, threads=threads)
        rows.append(_row(exp, seed, "bks_alo", f"{prefix}m={m}", rep, risk, fit_time))
        rep = randalo(y, yhat, oracle, loss, phi, m=m, seed=seed, threads=threads)
        rows.append(_row(exp, seed, "randalo", f"{prefix}m={m}", rep, risk, fit_time))
    if exact if exact is not None else data.n <= EXACT_MAX_N:
        rep = exact_alo(y, yhat, oracle, loss, phi)
        rows.append(_row(exp, seed, "exact_alo", f"{prefix}-" if not prefix else prefix.rstrip(";"), rep, risk, fit_time))
    return rows


def _clt_rows(exp, seed, d, scale):
    n = max(8, int(round(d.n * scale)))
    p = max(4, int(round(d.p * scale)))
    data = clt_design(n, p, seed)
    t0 = time.perf_counter()
    diag = clt_diagnostics(data, probes=d.extra.get("trials", 1000), m=d.ms[0], seed=seed)
    wall = time.perf_counter() - t0
    return [
        ResultRow(exp, seed, "clt", key, float(val), None, None, diag.z_scores.size, None, "", wall, None)
        for key, val in diag.summary().items()
    ]


def _seed_rows(name, d, scale, seed, threads, Ks, ms):
    if name == "clt_validation":
        return _clt_rows(name, seed, d, scale)
    base = SyntheticSpec(d.family, n=d.n, p=d.p, s=d.s, noise=d.noise, seed=seed, **d.extra).scaled(scale)
    rows = []
    if d.lam0:
        rs = base.resolved()
        for lam0 in d.lam0:
            lam = sweep_lambda(lam0, rs.n, rs.p)
            spec = replace(base, lam=lam)
            rows += evaluate_instance(name, seed, spec, pen.lasso(lam), Ks, ms, exact=False,
                                      tag=f"lam0={lam0:g}", threads=threads)
    elif d.sizes:
        for size in d.sizes:
            spec = replace(base, n=size, p=size, s=None).scaled(scale) if size else base
            spec = replace(spec, seed=seed)
            rows += evaluate_instance(name, seed, spec, None, Ks, ms, exact=False,
                                      tag=f"n={spec.n}", threads=threads)
    else:
        rows += evaluate_instance(name, seed, base, None, Ks, ms, threads=threads)
    return rows


def run_experiment(name, scale=1.0, seeds=10, output_path=None, threads=1, Ks=None, ms=None,
                   fmt="csv", timing=False):
    """Run a named experiment over ``seeds`` (a count or an explicit list).

    Rows come back sorted by (experiment, seed, method, parameter).
    """
    if name not in EXPERIMENTS:
        raise InvalidSpec(f"unknown experiment {name!r}; expected one of {sorted(EXPERIMENTS)}")
    if not scale > 0:
        raise InvalidSpec("scale must be positive")
    d = EXPERIMENTS[name]
    Ks = tuple(d.Ks if Ks is None else Ks)
    ms = tuple(d.ms if ms is None else ms)
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    # with seeds spread over workers, probes inside a seed run on one thread
    inner = 1 if threads > 1 and len(seed_list) > 1 else threads

    def one(seed):
        try:
            return _seed_rows(name, d, scale, seed, inner, Ks, ms)
        except RandALOError as exc:
            if exc.args:
                exc.args = (f"{name} seed {seed}: {exc.args[0]}",) + exc.args[1:]
            raise

    if threads > 1 and len(seed_list) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(one, seed_list))
    else:
        chunks = [one(s) for s in seed_list]
    rows = sorted((r for c in chunks for r in c), key=ResultRow.key)
    if output_path is not None:
        from ..io import write_rows

        write_rows(rows, output_path, fmt=fmt, timing=timing, header={"experiment": name, "scale": scale})
    return rows


def summarize(rows):
    """Per (method, parameter): bias of the mean estimate, mean |relative bias|, SD, time."""
    groups = {}
    for r in rows:
        groups.setdefault((r.experiment, r.method, r.parameter), []).append(r)
    out = []
    for (exp, method, param), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], _natural(kv[0][2]))):
        est = np.array([r.risk_estimate for r in rs], dtype=float)
        risk = np.array([np.nan if r.conditional_risk is None else r.conditional_risk for r in rs], dtype=float)
        rel = (est - risk) / risk
        times = [r.wall_time for r in rs if r.wall_time is not None]
        entry = {
            "experiment": exp,
            "method": method,
            "parameter": param,
            "trials": len(rs),
            "mean_estimate": float(est.mean()),
        }
        if np.all(np.isfinite(risk)):
            entry.update(
                mean_relative_bias=float(rel.mean()),
                sd_relative_bias=float(rel.std(ddof=1)) if len(rs) > 1 else 0.0,
                bias_of_mean=float((est.mean() - risk.mean()) / risk.mean()),
                mean_abs_relative_bias=float(np.abs(rel).mean()),
            )
        if times:
            entry.update(mean_time=float(np.mean(times)), sd_time=float(np.std(times)))
        out.append(entry)
    return out


def selection_counts(rows, a="lam0=10", b="lam0=15"):
    """How often each method/setting ranks hyperparameter ``a`` below ``b``."""
    table = {}
    for r in rows:
        if not r.parameter.startswith((a + ";", b + ";")) and r.parameter not in (a, b):
            continue
        lam, _, rest = r.parameter.partition(";")
        table.setdefault((r.method, rest or "-", r.seed), {})[lam] = r.risk_estimate
    counts = {}
    for (method, rest, _), vals in table.items():
        if a in vals and b in vals:
            c = counts.setdefault((method, rest), [0, 0])
            c[0 if vals[a] < vals[b] else 1] += 1
    return counts
