"""Risk estimators: randomized ALO with debiasing, BKS-ALO, exact ALO, ridge LOO and CV.

The randomized pipeline:

1. probe ``J~`` with Rademacher vectors ``w_k`` and keep ``D[:, k] = (J~ w_k) * w_k``;
2. for each subsample size ``m'`` average a random subset of the columns and
   shrink the average toward ``[0, 1]`` with a truncated-normal posterior mean;
3. apply the ALO correction and evaluate the plug-in risk ``R(m')``;
4. regress ``R(m')`` on ``1/m'`` and report the intercept.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import erf, erfcx

from .errors import DegenerateDesign, DivisionGuard, InvalidSpec, RandALOError, SingularSystem
from .jacobian import exact_diag
from .model.fit import fit
from .model.kernel import fit_kernel
from .model.losses import get_loss

log = logging.getLogger(__name__)

EPS_DIV = 1e-12
PROBE_BLOCK = 8  # columns per oracle call; fixed so results do not depend on thread count

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def default_threads():
    try:
        return max(1, int(os.environ.get("RANDALO_THREADS", "1")))
    except ValueError:
        return 1


# probes and diagonal samples -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProbeMatrix:
    entries: np.ndarray
    seed: int

    @property
    def m(self):
        return self.entries.shape[1]


def probe_column(n, seed, k):
    """Rademacher column ``k``; its stream depends only on ``(seed, k)``."""
    rng = np.random.default_rng([seed, 0, k])
    return rng.integers(0, 2, size=n).astype(float) * 2.0 - 1.0


def rademacher_probes(n, m, seed):
    return ProbeMatrix(np.column_stack([probe_column(n, seed, k) for k in range(m)]), seed)


@dataclass(eq=False)
class DiagSamples:
    samples: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    seed: int = 0

    @classmethod
    def from_samples(cls, samples, seed=0):
        samples = np.asarray(samples, dtype=float)
        m = samples.shape[1]
        mu = samples.mean(axis=1)
        sigma2 = samples.var(axis=1, ddof=1) if m >= 2 else np.zeros(samples.shape[0])
        return cls(samples, mu, sigma2, seed)

    @property
    def m(self):
        return self.samples.shape[1]


def bks_diag_samples(oracle, m, seed=0, threads=None):
    """Apply the oracle to ``m`` Rademacher probes and collect ``(J~ w) * w``."""
    if m < 2:
        raise InvalidSpec("need at least two probes")
    n = oracle.n
    threads = threads or default_threads()
    D = np.empty((n, m))
    blocks = [(s, min(s + PROBE_BLOCK, m)) for s in range(0, m, PROBE_BLOCK)]

    def run(block):
        lo, hi = block
        W = np.column_stack([probe_column(n, seed, k) for k in range(lo, hi)])
        D[:, lo:hi] = oracle.apply(W) * W

    if threads == 1 or len(blocks) == 1:
        for b in blocks:
            run(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, blocks))
    return DiagSamples.from_samples(D, seed)


# truncated-normal posterior mean ---------------------------------------------------

def _std_truncnorm_mean(a, b):
    """Mean of a standard normal restricted to ``[a, b]`` (arrays, ``a < b``)."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = np.empty(a.shape)
    flip = b <= 0.0
    # mirror the left tail onto the right
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    right = lo >= 0.0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        # right tail: scale numerator and denominator by exp(lo^2 / 2)
        delta = 0.5 * (hi - lo) * (hi + lo)
        e = np.exp(-delta)
        num = -np.expm1(-delta)
        den = erfcx(lo / _SQRT2) - e * erfcx(hi / _SQRT2)
        tail = _SQRT_2_OVER_PI * num / den
        # interval straddles zero: plain differences are well conditioned
        num_m = np.exp(-0.5 * lo * lo) - np.exp(-0.5 * hi * hi)
        den_m = erf(hi / _SQRT2) - erf(lo / _SQRT2)
        mixed = _SQRT_2_OVER_PI * num_m / den_m
        res = np.where(right, tail, mixed)
        # intervals far narrower than the spread: the density is nearly linear across them
        mid = 0.5 * (lo + hi)
        w = hi - lo
        narrow = w * (1.0 + np.abs(mid)) < 1e-4
        res = np.where(narrow, mid - w * w * mid / 12.0, res)
    out[...] = np.where(flip, -res, res)
    return out


def truncated_normal_mean(loc, scale, lower=0.0, upper=1.0):
    """``E[Z | lower <= Z <= upper]`` for ``Z ~ N(loc, scale^2)``; vectorized.

    ``scale = 0`` returns ``loc`` clamped to the interval. For ``scale > 0`` the
    result lies strictly inside ``(lower, upper)``.
    """
    loc = np.asarray(loc, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(scale < 0):
        raise ValueError("scale must be nonnegative")
    if not lower < upper:
        raise ValueError("need lower < upper")
    loc, scale = np.broadcast_arrays(loc, scale)
    out = np.array(np.clip(loc, lower, upper), dtype=float)
    pos = scale > 0
    if np.any(pos):
        s = scale[pos]
        l0 = loc[pos]
        a = (lower - l0) / s
        b = (upper - l0) / s
        val = l0 + s * _std_truncnorm_mean(a, b)
        if np.isfinite(lower) and np.isfinite(upper):
            val = np.where(np.isfinite(val), val, 0.5 * (lower + upper))
        inside_lo = np.nextafter(lower, upper)
        inside_hi = np.nextafter(upper, lower)
        out[pos] = np.clip(val, inside_lo, inside_hi)
    return out if out.ndim else float(out)


def mmse_diag(samples, m_used, subset_mu):
    """Posterior-mean diagonal under a uniform prior on ``[0, 1]``.

    Uses the all-sample variances with the subset means.
    """
    scale = np.sqrt(np.maximum(samples.sigma2, 0.0) / m_used)
    return truncated_normal_mean(subset_mu, scale, 0.0, 1.0)


# ALO correction and risks -----------------------------------------------------------

def alo_correct(y, yhat, d, loss="squared"):
    """``y~_i = yhat_i + l'_i d_i / (l''_i (1 - d_i))``."""
    loss = get_loss(loss)
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    d = np.asarray(d, dtype=float)
    gap = 1.0 - d
    bad = np.flatnonzero(~(gap >= EPS_DIV))
    if bad.size:
        i = int(bad[0])
        raise DivisionGuard(i, float(d[i]))
    return yhat + loss.d1(y, yhat) * d / (loss.d2(y, yhat) * gap)


def squared_error(y, z):
    return (np.asarray(y, dtype=float) - np.asarray(z, dtype=float)) ** 2


def misclassification(y, z):
    return (np.sign(np.asarray(z, dtype=float)) != np.sign(np.asarray(y, dtype=float))).astype(float)


@dataclass(frozen=True)
class RiskFunction:
    kind: str = "squared_error"

    def __post_init__(self):
        if self.kind not in RISKS:
            raise InvalidSpec(f"unknown risk {self.kind!r}; expected one of {sorted(RISKS)}")

    def evaluate(self, y, z):
        return RISKS[self.kind](y, z)

    __call__ = evaluate


RISKS = {"squared_error": squared_error, "misclassification": misclassification}


def get_risk(phi):
    if isinstance(phi, RiskFunction):
        return phi
    if callable(phi):
        return phi
    return RiskFunction(phi)


def plugin_risk(y, ytilde, phi="squared_error"):
    y = np.asarray(y, dtype=float)
    ytilde = np.asarray(ytilde, dtype=float)
    if y.shape != ytilde.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {ytilde.shape}")
    vals = get_risk(phi)(y, ytilde)
    return math.fsum(vals) / y.size


def debias_regression(curve, weights=None):
    """Fit ``R(m') = R0 + R0' / m'`` by least squares; returns ``(R0, R0')``.

    ``weights`` (optional, one per point) turns OLS into weighted least squares.
    """
    pts = np.asarray([(float(m), float(r)) for m, r in curve], dtype=float).reshape(-1, 2)
    if np.unique(pts[:, 0]).size < 2:
        raise DegenerateDesign("debiasing needs at least two distinct subsample sizes")
    A = np.column_stack([np.ones(len(pts)), 1.0 / pts[:, 0]])
    r = pts[:, 1]
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        A, r = A * sw[:, None], r * sw
    coef, *_ = np.linalg.lstsq(A, r, rcond=None)
    return float(coef[0]), float(coef[1])


# estimators -----------------------------------------------------------------------------

@dataclass(eq=False)
class RiskReport:
    estimate: float
    slope: float
    curve: list
    method: str
    diagnostics: dict = field(default_factory=dict)
    predictions: np.ndarray | None = None

    @property
    def warnings(self):
        return self.diagnostics.get("warnings", [])


def default_schedule(m):
    return list(range(math.ceil(m / 2), m + 1))


def _subset(m, m_sub, seed):
    if m_sub == m:
        return np.arange(m)
    rng = np.random.default_rng([seed, 1, m_sub])
    return np.sort(rng.choice(m, size=m_sub, replace=False))


def randalo(y, yhat, oracle, loss="squared", phi="squared_error", m=50, seed=0,
            subset_schedule=None, threads=None, weights=None, samples=None):
    """Randomized ALO with subsampling-based debiasing.

    ``samples`` may pass precomputed :class:`DiagSamples` (then no probes are drawn).
    """
    if m < 4:
        raise InvalidSpec("randomized ALO needs m >= 4 probes")
    t0 = time.perf_counter()
    solves0 = oracle.solve_counter
    work0 = oracle.work
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if samples is None:
        samples = bks_diag_samples(oracle, m, seed, threads)
    elif samples.m != m:
        raise InvalidSpec(f"samples hold {samples.m} probes, expected {m}")
    schedule = sorted(set(default_schedule(m) if subset_schedule is None else subset_schedule))
    if not schedule or schedule[0] < 1 or schedule[-1] > m:
        raise InvalidSpec(f"subset schedule must lie in [1, {m}]")
    curve, warns = [], []
    predictions = None
    for m_sub in schedule:
        idx = _subset(m, m_sub, seed)
        mu_sub = samples.samples[:, idx].mean(axis=1)
        d = mmse_diag(samples, m_sub, mu_sub)
        try:
            yt = alo_correct(y, yhat, d, loss)
        except DivisionGuard as exc:
            msg = f"m'={m_sub}: {exc}"
            warns.append(msg)
            log.warning(msg)
            continue
        curve.append((m_sub, plugin_risk(y, yt, phi)))
        if m_sub == m:
            predictions = yt
    if len(curve) < 2:
        raise DegenerateDesign(f"only {len(curve)} usable subsample sizes after division guards")
    r0, slope = debias_regression(curve, None if weights is None else weights[: len(curve)])
    if slope < 0:
        warns.append(f"negative debiasing slope {slope:.6g}")
    diag = {
        "solves": oracle.solve_counter - solves0,
        "work": oracle.setup_work + oracle.work - work0,
        "time": oracle.setup_time + time.perf_counter() - t0,
        "seed": seed,
        "m": m,
        "schedule": schedule,
        "negative_slope": slope < 0,
        "warnings": warns,
    }
    return RiskReport(r0, slope, curve, "randalo", diag, predictions)


def bks_alo(y, yhat, oracle, loss="squared", phi="squared_error", m=50, seed=0, threads=None, samples=None):
    """Plug-in risk with the posterior-mean diagonal from all ``m`` probes."""
    if m < 2:
        raise InvalidSpec("BKS-ALO needs m >= 2 probes")
    t0 = time.perf_counter()
    solves0, work0 = oracle.solve_counter, oracle.work
    if samples is None:
        samples = bks_diag_samples(oracle, m, seed, threads)
    d = mmse_diag(samples, m, samples.mu)
    yt = alo_correct(y, yhat, d, loss)
    risk = plugin_risk(y, yt, phi)
    diag = {
        "solves": oracle.solve_counter - solves0,
        "work": oracle.setup_work + oracle.work - work0,
        "time": oracle.setup_time + time.perf_counter() - t0,
        "seed": seed,
        "m": m,
        "warnings": [],
    }
    return RiskReport(risk, 0.0, [(m, risk)], "bks_alo", diag, yt)


def exact_alo(y, yhat, oracle, loss="squared", phi="squared_error", diag=None):
    """Plug-in risk at the exact diagonal (``n`` oracle applications)."""
    t0 = time.perf_counter()
    solves0, work0 = oracle.solve_counter, oracle.work
    d = exact_diag(oracle) if diag is None else np.asarray(diag, dtype=float)
    yt = alo_correct(y, yhat, d, loss)
    risk = plugin_risk(y, yt, phi)
    info = {
        "solves": oracle.solve_counter - solves0,
        "work": oracle.setup_work + oracle.work - work0,
        "time": oracle.setup_time + time.perf_counter() - t0,
        "warnings": [],
        "diag": d,
    }
    return RiskReport(risk, 0.0, [(oracle.n, risk)], "exact_alo", info, yt)


def ridge_hat_diag(X, lam):
    """Diagonal of ``X (X^T X + lam I)^{-1} X^T`` and the factor used to get it."""
    X = X.toarray() if sp.issparse(X) else np.asarray(X, dtype=float)
    n, p = X.shape
    try:
        if p <= n:
            c = sla.cho_factor(X.T @ X + lam * np.eye(p))
            return np.einsum("ij,ji->i", X, sla.cho_solve(c, X.T)), lambda y: X @ sla.cho_solve(c, X.T @ y)
        K = X @ X.T
        c = sla.cho_factor(K + lam * np.eye(n))
        # K (K + lam I)^{-1} = I - lam (K + lam I)^{-1}
        inv_diag = np.diag(sla.cho_solve(c, np.eye(n)))
        return 1.0 - lam * inv_diag, lambda y: K @ sla.cho_solve(c, y)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"ridge system is singular: {exc}") from exc


def ridge_loo_shortcut(data, y=None, lam=1.0):
    """Exact ridge leave-one-out predictions ``(yhat_i - J_ii y_i) / (1 - J_ii)``."""
    X = getattr(data, "X", data)
    if y is None:
        y = data.y
    y = np.asarray(y, dtype=float)
    if lam <= 0:
        raise InvalidSpec("ridge LOO shortcut needs lam > 0")
    jd, smooth = ridge_hat_diag(X, lam)
    yhat = smooth(y)
    return (yhat - jd * y) / (1.0 - jd)


def cv_folds(n, K, seed=0):
    if not 2 <= K <= n:
        raise InvalidSpec(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, K)]


def _fold_error(exc, k):
    if exc.args:
        exc.args = (f"fold {k}: {exc.args[0]}",) + exc.args[1:]
    exc.fold = k
    return exc


def kfold_cv(data, y=None, loss="squared", reg=None, phi="squared_error", K=5, seed=0, fit_cfg=None):
    """K-fold cross-validation; ``K = n`` gives leave-one-out CV."""
    from .model.penalties import Regularizer

    reg = Regularizer() if reg is None else reg
    X = data.X
    y = data.y if y is None else np.asarray(y, dtype=float)
    n, p = X.shape
    folds = cv_folds(n, K, seed)
    risk = get_risk(phi)
    held = np.empty(n)
    t0 = time.perf_counter()
    work = 0.0
    for k, test in enumerate(folds):
        train = np.setdiff1d(np.arange(n), test, assume_unique=True)
        try:
            model = fit(data.subset(train), loss, reg, fit_cfg, y=y[train])
        except RandALOError as exc:
            raise _fold_error(exc, k)
        work += model.stats.get("work", 0.0) * train.size / n
        held[test] = np.asarray(X[test] @ model.coef).ravel()
    vals = risk(y, held)
    diag = {"solves": K, "work": work, "time": time.perf_counter() - t0, "seed": seed, "K": K, "warnings": []}
    method = "loo_cv" if K == n else "kfold_cv"
    return RiskReport(math.fsum(vals) / n, 0.0, [], method, diag, held)


def kfold_cv_kernel(K_full, y, loss="squared", lam=1.0, phi="squared_error", K=5, seed=0):
    """K-fold CV for kernel models given the full Gram matrix."""
    y = np.asarray(y, dtype=float)
    n = y.size
    folds = cv_folds(n, K, seed)
    risk = get_risk(phi)
    held = np.empty(n)
    t0 = time.perf_counter()
    for k, test in enumerate(folds):
        train = np.setdiff1d(np.arange(n), test, assume_unique=True)
        try:
            model = fit_kernel(K_full[np.ix_(train, train)], y[train], loss, lam)
        except RandALOError as exc:
            raise _fold_error(exc, k)
        held[test] = model.predict(K_full[np.ix_(test, train)])
    diag = {"solves": K, "time": time.perf_counter() - t0, "seed": seed, "K": K, "warnings": []}
    return RiskReport(math.fsum(risk(y, held)) / n, 0.0, [], "loo_cv" if K == n else "kfold_cv", diag, held)
