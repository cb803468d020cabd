"""Acceptance suite. Every criterion prints one PASS/FAIL line with the measured values.

Run with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from instances import FAMILIES, fitted_family
from oracles import refit_loo, ridge_closed_form, truncnorm_mean_quad
from randalo.alo import bks_diag_samples, exact_alo, mmse_diag, truncated_normal_mean
from randalo.cli import cmd_estimate
from randalo.config import RunConfig
from randalo.data import Dataset
from randalo.experiments import (
    SyntheticSpec,
    clt_design,
    clt_diagnostics,
    evaluate_instance,
    run_experiment,
    sweep_lambda,
)
from randalo.io import data_lines, format_rows
from randalo.jacobian import build_oracle, exact_diag, finite_difference_jvp, generic_oracle
from randalo.model import fit, lasso, ridge

HERE = os.path.dirname(os.path.abspath(__file__))

# pinned tolerances
AC1_TOL = 1e-8
AC2_MEAN, AC2_VAR, AC2_CORR = 0.05, (0.9, 1.1), 0.05
AC3_ROUTE_REL, AC3_FD = 1e-8, 1e-4
AC4_TOL = 1e-10
AC5_MAX_ABS_REL = 0.01
AC6_MIN_SHARE = 0.90
AC7_RANDALO_MIN, AC7_CV_MAX = 0.90, 0.70


class Verdict:
    """Collects PASS/FAIL lines; ``check`` fails the test if any line failed."""

    def __init__(self, reporter):
        self.reporter = reporter
        self.lines = []

    def __call__(self, tag, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {tag}: {detail}"
        self.lines.append((bool(ok), line))
        if self.reporter is not None:
            self.reporter.write_line(line)
        else:
            print(line)

    def check(self):
        failed = [line for ok, line in self.lines if not ok]
        assert not failed, "\n".join(failed)


@pytest.fixture
def verdict(request):
    return Verdict(request.config.pluginmanager.getplugin("terminalreporter"))


def test_ac1_ridge_alo_equals_loo(verdict):
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(20):
        n = int(rng.integers(10, 121))
        p = int(rng.integers(1, 81))
        lam = (0.1, 1.0, 10.0)[i % 3]
        X = rng.standard_normal((n, p))
        y = X @ rng.standard_normal(p) + rng.standard_normal(n)
        data = Dataset(X, y)
        model = fit(data, "squared", ridge(lam))
        alo_pred = exact_alo(y, model.predictions, build_oracle(model, data)).predictions
        loo = refit_loo(X, y, lambda Xt, yt, x: x @ ridge_closed_form(Xt, yt, lam))
        worst = max(worst, float(np.abs(alo_pred - loo).max()))
    verdict("AC1 ridge ALO = LOO", worst <= AC1_TOL, f"max abs error {worst:.2e} (tol {AC1_TOL:g})")
    verdict.check()


def test_ac2_clt_diagnostics(verdict):
    diag = clt_diagnostics(clt_design(200, 150, seed=0), probes=1000, m=10, seed=0)
    zm, zv, r = diag.z_mean, diag.z_var, diag.adjacent_correlation
    ok = abs(zm) <= AC2_MEAN and AC2_VAR[0] <= zv <= AC2_VAR[1] and abs(r) < AC2_CORR
    verdict("AC2 Gaussian limit", ok, f"z mean {zm:+.4f}, z var {zv:.4f}, adjacent r {r:+.4f}")
    verdict.check()


@pytest.mark.parametrize("name", FAMILIES)
def test_ac3_jvp_correctness(verdict, name):
    data, model, refit = fitted_family(name)
    oracle = build_oracle(model, data)
    generic = generic_oracle(model, data.X)
    Z = np.random.default_rng(11).standard_normal((data.n, 20))
    A, B = oracle.apply(Z), generic.apply(Z)
    route = float(max(np.linalg.norm(A[:, k] - B[:, k]) / np.linalg.norm(B[:, k]) for k in range(20)))
    fd_err, same = 0.0, True
    for z in Z.T[:5]:
        fd, kept = finite_difference_jvp(refit, model, z, eps=1e-5)
        same &= kept
        fd_err = max(fd_err, float(np.abs(fd - oracle.apply(z)).max()))
    ok = route <= AC3_ROUTE_REL and fd_err <= AC3_FD and same
    verdict(f"AC3 JVP {name} ({oracle.route})", ok,
            f"vs generic {route:.1e} (tol {AC3_ROUTE_REL:g}), vs refit FD {fd_err:.1e} (tol {AC3_FD:g})")
    verdict.check()


def test_ac4_truncated_normal(verdict):
    locs = np.linspace(-2.0, 3.0, 40)
    scales = np.geomspace(1e-6, 5.0, 25)
    L, S = np.meshgrid(locs, scales)
    got = truncated_normal_mean(L.ravel(), S.ravel())
    ref = np.array([truncnorm_mean_quad(a, b) for a, b in zip(L.ravel(), S.ravel())])
    grid_err = float(np.abs(got - ref).max())

    mse_mu, mse_mmse = [], []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.5, 1.0, 100)
        X = t[:, None] * rng.standard_normal((100, 100))
        data = Dataset(X, rng.standard_normal(100))
        oracle = build_oracle(fit(data, "squared", ridge(0.1)), data)
        J = exact_diag(oracle)
        samples = bks_diag_samples(oracle, 50, seed)
        mu = samples.samples.mean(axis=1)
        mse_mu.append(np.mean((mu - J) ** 2))
        mse_mmse.append(np.mean((mmse_diag(samples, 50, mu) - J) ** 2))
    a, b = float(np.mean(mse_mmse)), float(np.mean(mse_mu))
    verdict("AC4 truncated-normal grid", grid_err <= AC4_TOL, f"max abs error {grid_err:.2e} over {got.size} points")
    verdict("AC4 MMSE diagonal vs raw mean", a < b, f"MSE {a:.3e} vs {b:.3e} over 50 seeds")
    verdict.check()


@pytest.fixture(scope="module")
def lasso_rows():
    rows = []
    for seed in range(20):
        spec = SyntheticSpec("gaussian_lasso", n=1000, p=1000, seed=seed)
        rows += evaluate_instance("ac5", seed, spec, Ks=(5,), ms=(50,), exact=True)
    return rows


def _by_method(rows, method):
    return [r for r in rows if r.method == method]


def _bias_of_mean(rows):
    est = np.mean([r.risk_estimate for r in rows])
    risk = np.mean([r.conditional_risk for r in rows])
    return float((est - risk) / risk)


def test_ac5_debiasing(verdict, lasso_rows):
    r, b, cv = (_by_method(lasso_rows, m) for m in ("randalo", "bks_alo", "kfold_cv"))
    br, bb, bc = _bias_of_mean(r), _bias_of_mean(b), _bias_of_mean(cv)
    mean_abs = float(np.mean([abs(x.relative_bias) for x in r]))
    exact_abs = float(np.mean([abs(x.relative_bias) for x in _by_method(lasso_rows, "exact_alo")]))
    verdict("AC5 bias ordering", abs(br) < abs(bb) < abs(bc),
            f"RandALO {br:+.4f}, BKS {bb:+.4f}, 5-fold CV {bc:+.4f}")
    verdict("AC5 RandALO mean |relative bias|", mean_abs <= AC5_MAX_ABS_REL,
            f"{mean_abs:.4f} (tol {AC5_MAX_ABS_REL:g}); exact ALO {exact_abs:.4f}; bias of mean {br:+.4f}")
    w_r = float(np.mean([x.work for x in r]))
    w_cv = float(np.mean([x.work for x in cv]))
    verdict("AC5 cost accounting", w_r <= w_cv,
            f"RandALO {w_r:.1f} vs 5-fold CV {w_cv:.1f} data passes "
            f"({r[0].solve_count} probe solves vs {cv[0].solve_count} refits)")
    verdict.check()


def test_ac6_cv_upward_bias(verdict, lasso_rows):
    rel = np.array([x.relative_bias for x in _by_method(lasso_rows, "kfold_cv")])
    share = float(np.mean(rel > 0))
    verdict("AC6 CV bias positive", share >= AC6_MIN_SHARE,
            f"{int((rel > 0).sum())}/{rel.size} seeds (need {AC6_MIN_SHARE:.0%}); mean {rel.mean():+.4f}")
    verdict.check()


def test_ac7_hyperparameter_selection(verdict):
    n, p = 1000, 5000
    picks = {"randalo": 0, "kfold_cv": 0, "conditional": 0}
    seeds = range(30)
    for seed in seeds:
        base = SyntheticSpec("gaussian_lasso", n=n, p=p, s=50, noise=2.0, seed=seed)
        est = {}
        for lam0 in (10.0, 15.0):
            lam = sweep_lambda(lam0, n, p)
            rows = evaluate_instance("ac7", seed, replace(base, lam=lam), lasso(lam), Ks=(5,), ms=(100,), exact=False)
            est[lam0] = {r.method: r.risk_estimate for r in rows}
        for m in picks:
            picks[m] += est[10.0][m] < est[15.0][m]
    k = len(seeds)
    ra, cv = picks["randalo"] / k, picks["kfold_cv"] / k
    verdict("AC7 RandALO selects lam0=10", ra >= AC7_RANDALO_MIN,
            f"{picks['randalo']}/{k} (need {AC7_RANDALO_MIN:.0%}); oracle {picks['conditional']}/{k}")
    verdict("AC7 5-fold CV selects lam0=10", cv <= AC7_CV_MAX, f"{picks['kfold_cv']}/{k} (need at most {AC7_CV_MAX:.0%})")
    verdict.check()


def test_ac8_determinism(verdict):
    outputs = {}
    for method in ("randalo", "bks_alo", "exact_alo", "kfold_cv"):
        cfg = RunConfig()
        cfg.data.n, cfg.data.p = 300, 200
        cfg.estimator.methods = [method]
        texts = [data_lines("\n".join(format_rows(cmd_estimate(cfg, t)))) for t in (1, 2, 8)]
        outputs[method] = texts[0] == texts[1] == texts[2]
    bench = [data_lines("\n".join(format_rows(run_experiment("lasso_scaling", 0.1, 4, threads=t)))) for t in (1, 2, 8)]
    outputs["bench"] = bench[0] == bench[1] == bench[2]
    ok = all(outputs.values())
    verdict("AC8 determinism across 1/2/8 threads", ok, ", ".join(f"{k} {'same' if v else 'differs'}" for k, v in outputs.items()))
    verdict.check()


def test_ac9_property_suite(verdict):
    expr = ("adjoint or unbiased or unit_interval or exact_curve or stable_under_perturbation "
            "or feasibility or hypothesis or strictly_inside or closed_form_oracle or monotone")
    files = [os.path.join(HERE, f) for f in ("test_linops.py", "test_model.py", "test_jacobian.py", "test_alo.py")]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "-k", expr, *files],
                          capture_output=True, text=True, cwd=HERE)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()
    verdict("AC9 property suite", proc.returncode == 0, tail)
    verdict.check()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
