"""Finite-sample check of the Gaussian limit for randomized diagonal estimates.

For ``J~ = X (X^T X + G)^{-1} X^T`` with rows ``x_i = sqrt(t_i) Sigma^{1/2} z_i``,
the error ``mu_i - J~_ii`` of an ``m``-probe estimate is approximately
``N(0, t_i nu / (m (1 + t_i eta)^2))`` and errors at distinct ``i`` are
uncorrelated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..alo import probe_column
from ..data import Dataset


@dataclass(eq=False)
class CltDiagnostics:
    eta: float
    nu: float
    z_scores: np.ndarray  # trials x n, for m-probe averages
    single_z: np.ndarray  # trials x n, first probe of each trial
    adjacent_correlation: float
    exact_diag: np.ndarray
    m: int

    @property
    def z_mean(self):
        return float(self.z_scores.mean())

    @property
    def z_var(self):
        return float(self.z_scores.var())

    def summary(self):
        return {
            "eta": self.eta,
            "nu": self.nu,
            "z_mean": self.z_mean,
            "z_var": self.z_var,
            "adjacent_correlation": self.adjacent_correlation,
        }


def clt_design(n=200, p=150, seed=0):
    """Rademacher ``Z``, ``sqrt(t)`` in {1,2,3,4} and ``sigma_j`` in {1,2} in equal shares."""
    rng = np.random.default_rng(seed)
    Z = rng.integers(0, 2, size=(n, p)) * 2.0 - 1.0
    sqrt_t = rng.permutation(np.resize(np.arange(1.0, 5.0), n))
    sig = rng.permutation(np.resize(np.array([1.0, 2.0]), p))
    t = sqrt_t**2
    Sigma = np.diag(sig**2)
    X = sqrt_t[:, None] * Z * sig[None, :]
    G = n * np.eye(p)
    return Dataset(X, np.zeros(n), {"t": t, "Sigma": Sigma, "G": G})


def eta_nu(X, Sigma, G, method="dense"):
    """``eta = tr[Sigma A^{-1}]`` and ``nu = tr[Sigma A^{-1} X^T X A^{-1}]``, ``A = X^T X + G``.

    ``method="dense"`` forms the products; ``"eigen"`` works in the eigenbasis of ``A``.
    """
    XtX = X.T @ X
    A = XtX + G
    if method == "dense":
        Ainv = np.linalg.inv(A)
        SA = Sigma @ Ainv
        return float(np.trace(SA)), float(np.trace(SA @ XtX @ Ainv))
    if method == "eigen":
        lam, V = np.linalg.eigh(A)
        S = V.T @ Sigma @ V
        C = V.T @ XtX @ V
        inv = 1.0 / lam
        eta = float(np.sum(np.diag(S) * inv))
        nu = float(np.sum(S * C.T * np.outer(inv, inv)))
        return eta, nu
    raise ValueError(f"unknown method {method!r}")


def _pooled_adjacent_correlation(z):
    """Correlation between ``z[:, i]`` and ``z[:, i + 1]`` pooled over rows and pairs."""
    a = z[:, :-1].ravel()
    b = z[:, 1:].ravel()
    return float(np.corrcoef(a, b)[0, 1])


def clt_diagnostics(data, G=None, probes=1000, m=10, seed=0):
    """Standardized BKS errors over repeated probe draws.

    ``probes`` is the number of trials (each with ``m`` fresh probes) or an
    explicit ``n x (trials * m)`` array of Rademacher columns. ``data.meta``
    must carry ``t`` and ``Sigma``.
    """
    X = np.asarray(data.X, dtype=float)
    n, p = X.shape
    t = np.asarray(data.meta["t"], dtype=float)
    Sigma = data.meta["Sigma"]
    G = data.meta.get("G") if G is None else G
    eta, nu = eta_nu(X, Sigma, G)

    c = sla.cho_factor(X.T @ X + G)
    J = X @ sla.cho_solve(c, X.T)
    jd = np.diag(J).copy()

    if np.isscalar(probes):
        trials = int(probes)
        W = None
    else:
        W = np.asarray(probes, dtype=float)
        if W.shape[0] != n or W.shape[1] % m:
            raise ValueError(f"probe array must be n x (trials * {m})")
        trials = W.shape[1] // m

    scale = np.sqrt(t * nu) / (1.0 + t * eta)
    z = np.empty((trials, n))
    z1 = np.empty((trials, n))
    for r in range(trials):
        if W is None:
            Wr = np.column_stack([probe_column(n, seed, r * m + k) for k in range(m)])
        else:
            Wr = W[:, r * m : (r + 1) * m]
        D = (J @ Wr) * Wr
        z[r] = (D.mean(axis=1) - jd) / (scale / np.sqrt(m))
        z1[r] = (D[:, 0] - jd) / scale
    return CltDiagnostics(eta, nu, z, z1, _pooled_adjacent_correlation(z1), jd, m)
