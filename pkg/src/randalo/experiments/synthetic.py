"""Synthetic data families with known coefficients and their conditional risks."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from ..data import Dataset
from ..errors import InvalidSpec, UnsupportedFamily
from ..model import penalties as pen

FAMILIES = ("gaussian_lasso", "first_difference", "logistic_ridge", "multivariate_t", "categorical")


@dataclass(frozen=True)
class SyntheticSpec:
    """Data recipe. ``None`` fields take the family default.

    ``noise`` is the noise standard deviation; ``lam`` the penalty weight in
    the objective ``sum_i l(y_i, x_i^T beta) + r(beta)``.
    """

    family: str = "gaussian_lasso"
    n: int = 1000
    p: int | None = None
    s: int | None = None
    noise: float | None = None
    lam: float | None = None
    nu: float = 5.0
    k: int = 10
    d: int | None = None
    rho: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n < 1:
            raise InvalidSpec("n must be positive")
        if self.family == "multivariate_t" and self.nu <= 2:
            raise InvalidSpec("multivariate t needs nu > 2 for finite covariance")

    def resolved(self):
        """Copy with every family default filled in."""
        f = self.family
        d = self.d
        if f == "categorical":
            d = d or self.n
            p = d * self.k
        else:
            p = self.p or self.n
        if p < 1:
            raise InvalidSpec("p must be positive")
        frac = {"logistic_ridge": 4}.get(f, 10)
        s = self.s if self.s is not None else max(1, math.ceil(p / frac))
        noise = self.noise
        if noise is None:
            noise = {"first_difference": 0.1, "categorical": math.sqrt(0.5), "logistic_ridge": 0.0}.get(f, 1.0)
        lam = self.lam
        if lam is None:
            lam = {
                "first_difference": float(p),
                "logistic_ridge": float(self.n),
                "categorical": math.sqrt(d) if d else 0.0,
            }.get(f, math.sqrt(self.n))
        if not 0 < s <= p:
            raise InvalidSpec(f"sparsity {s} outside (0, {p}]")
        return replace(self, p=p, s=s, noise=noise, lam=lam, d=d)

    def scaled(self, factor):
        """Shrink ``n``, ``p``, ``s`` (and ``d``) by ``factor``; ratio-derived defaults follow."""
        if factor <= 0:
            raise InvalidSpec("scale factor must be positive")

        def sc(v):
            return None if v is None else max(1, int(round(v * factor)))

        return replace(self, n=sc(self.n), p=sc(self.p), s=sc(self.s), d=sc(self.d))


def model_for(spec):
    """``(loss, regularizer, risk kind)`` used with each family."""
    spec = spec.resolved()
    f = spec.family
    if f == "first_difference":
        return "squared", pen.first_difference(spec.lam, spec.p), "squared_error"
    if f == "logistic_ridge":
        return "logistic", pen.ridge(spec.lam), "misclassification"
    return "squared", pen.lasso(spec.lam), "squared_error"


def _sparse_coef(rng, p, s, var):
    beta = np.zeros(p)
    idx = rng.choice(p, size=s, replace=False)
    beta[idx] = rng.normal(0.0, math.sqrt(var), size=s)
    return beta


def generate(spec):
    """Draw ``(Dataset, beta_star, meta)`` for the recipe in ``spec``."""
    spec = spec.resolved()
    rng = np.random.default_rng(spec.seed)
    n, p, s, f = spec.n, spec.p, spec.s, spec.family
    meta = {"family": f, "lam": spec.lam, "noise": spec.noise, "spec": spec}
    if f == "first_difference":
        b = _sparse_coef(rng, p, s, 2.0 / (s * p))
        beta = np.cumsum(b)
    elif f == "logistic_ridge":
        beta = _sparse_coef(rng, p, s, 1.0 / s)
    else:
        beta = _sparse_coef(rng, p, s, 1.0 / s)

    if f == "categorical":
        d, k = spec.d, spec.k
        cats = rng.integers(0, k, size=(n, d))
        cols = (np.arange(d) * k)[None, :] + cats
        X = sp.csr_matrix(
            (np.full(n * d, math.sqrt(k)), cols.ravel(), np.arange(0, n * d + 1, d)), shape=(n, p)
        )
        X.sort_indices()
        meta.update(k=k, d=d)
    else:
        X = rng.standard_normal((n, p))
        if f == "multivariate_t":
            t = (spec.nu - 2.0) / rng.chisquare(spec.nu, size=n)
            X *= np.sqrt(t)[:, None]
            meta["t"] = t
    lin = np.asarray(X @ beta).ravel()
    if f == "logistic_ridge":
        prob = 1.0 / (1.0 + np.exp(-spec.rho * lin))
        y = np.where(rng.random(n) < prob, 1.0, -1.0)
        meta["rho"] = spec.rho
    else:
        y = lin + spec.noise * rng.standard_normal(n)
    return Dataset(X, y, meta), beta, meta


# conditional risks --------------------------------------------------------------

def gaussian_risk(beta_star, beta_hat, noise_var=1.0):
    """``||beta_hat - beta*||^2 + noise_var`` for isotropic designs."""
    diff = np.asarray(beta_hat) - np.asarray(beta_star)
    return float(diff @ diff) + noise_var


def categorical_risk(beta_star, beta_hat, k, noise_var=0.5):
    diff = np.asarray(beta_star, dtype=float) - np.asarray(beta_hat, dtype=float)
    blocks = diff.reshape(-1, k).sum(axis=1)
    return float(diff @ diff) + diff.sum() ** 2 / k - float(blocks @ blocks) / k + noise_var


_GH = np.polynomial.hermite_e.hermegauss(128)
_GL = np.polynomial.legendre.leggauss(128)
_HALF_LINE = 12.0


def logistic_misclassification_risk(beta_star, beta_hat, rho=5.0):
    """``E[sigmoid(-sgn(Zhat) rho Z)]`` with ``(Z, Zhat)`` jointly Gaussian.

    Writing ``Zhat = sqrt(b) u`` and ``Z = alpha u + gamma v`` with independent
    standard normals, symmetry under ``(u, v) -> (-u, -v)`` folds the sign into
    ``u >= 0``. The ``v`` integral uses Gauss-Hermite nodes, the ``u`` integral
    Gauss-Legendre nodes on ``[0, 12]`` (the integrand is smooth there).
    """
    bs = np.asarray(beta_star, dtype=float)
    bh = np.asarray(beta_hat, dtype=float)
    a = float(bs @ bs)
    b = float(bh @ bh)
    c = float(bs @ bh)
    if b == 0.0:
        return 0.5
    alpha = c / math.sqrt(b)
    gamma = math.sqrt(max(a - alpha * alpha, 0.0))
    xv, wv = _GH
    wv = wv / math.sqrt(2.0 * math.pi)
    xu, wu = _GL
    u = 0.5 * _HALF_LINE * (xu + 1.0)
    wu = 0.5 * _HALF_LINE * wu * 2.0 * np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
    arg = -rho * (alpha * u[:, None] + gamma * xv[None, :])
    sig = 0.5 * (1.0 + np.tanh(0.5 * arg))
    return float(wu @ sig @ wv)


def conditional_risk(family, beta_star, beta_hat, params=None):
    """Expected test risk of ``beta_hat`` given the family's data distribution."""
    params = dict(params or {})
    if family in ("gaussian_lasso", "multivariate_t", "first_difference"):
        noise = params.get("noise", 0.1 if family == "first_difference" else 1.0)
        return gaussian_risk(beta_star, beta_hat, noise**2)
    if family == "categorical":
        noise = params.get("noise", math.sqrt(0.5))
        return categorical_risk(beta_star, beta_hat, params.get("k", 10), noise**2)
    if family == "logistic_ridge":
        return logistic_misclassification_risk(beta_star, beta_hat, params.get("rho", 5.0))
    raise UnsupportedFamily(f"no conditional-risk oracle for {family!r}")
