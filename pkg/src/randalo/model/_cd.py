"""Numba kernels for cyclic coordinate descent on the elastic net.

Objective: 0.5 * ||y - X b||^2 + l1 * ||b||_1 + l2 / 2 * ||b||^2.
The residual ``r = y - X b`` is updated in place together with ``b``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def cd_dense(X, beta, r, l1, l2, col_sq, tol, max_sweeps):
    """X must be Fortran-ordered. Returns (sweeps, visits, changes, converged)."""
    n, p = X.shape
    sweeps = 0
    visits = 0
    changes = 0
    full = True
    while sweeps < max_sweeps:
        max_step = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            bj = beta[j]
            if not full and bj == 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += X[i, j] * r[i]
            visits += 1
            new = _soft(g + col_sq[j] * bj, l1) / (col_sq[j] + l2)
            d = new - bj
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * X[i, j]
                beta[j] = new
                changes += 1
                step = abs(d) * np.sqrt(col_sq[j])
                if step > max_step:
                    max_step = step
        sweeps += 1
        if max_step < tol:
            if full:
                return sweeps, visits, changes, True
            full = True
        else:
            full = False
    return sweeps, visits, changes, False


@njit(cache=True)
def cd_csc(indptr, indices, data, p, beta, r, l1, l2, col_sq, tol, max_sweeps):
    sweeps = 0
    visits = 0
    changes = 0
    full = True
    while sweeps < max_sweeps:
        max_step = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            bj = beta[j]
            if not full and bj == 0.0:
                continue
            g = 0.0
            for k in range(indptr[j], indptr[j + 1]):
                g += data[k] * r[indices[k]]
            visits += 1
            new = _soft(g + col_sq[j] * bj, l1) / (col_sq[j] + l2)
            d = new - bj
            if d != 0.0:
                for k in range(indptr[j], indptr[j + 1]):
                    r[indices[k]] -= d * data[k]
                beta[j] = new
                changes += 1
                step = abs(d) * np.sqrt(col_sq[j])
                if step > max_step:
                    max_step = step
        sweeps += 1
        if max_step < tol:
            if full:
                return sweeps, visits, changes, True
            full = True
        else:
            full = False
    return sweeps, visits, changes, False
