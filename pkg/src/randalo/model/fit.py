"""Solvers for regularized empirical risk minimization.

``fit`` dispatches on the loss/regularizer pair:

* smooth regularizer, squared loss  -> one linear solve (LDL or CG)
* smooth regularizer, other losses  -> Newton's method
* lasso / elastic net, squared loss -> coordinate descent
* transformed l1 (e.g. first differences) -> ADMM
* group lasso and anything else     -> accelerated proximal gradient

Every non-smooth solver finishes with a *polish* step: once the support is
identified the problem restricted to it is smooth (or an equality-constrained
QP), and solving that exactly drives the optimality residual to round-off.
Exact fits matter here because Jacobians are read off the active set and
checked against finite differences of refits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear

from ..data import Dataset
from ..errors import InvalidSpec, NonConvergence, SingularMatrix
from ..linops import LDLFactor, SolverConfig, cg_solve, prune_redundant_rows
from . import _cd
from .losses import Loss, get_loss
from .penalties import (
    ActiveSetPolicy,
    Regularizer,
    active_sets,
    group_hessian_block,
    term_active_set,
)

log = logging.getLogger(__name__)

DENSE_NEWTON_MAX = 3000


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-10
    max_iter: int = 20000
    method: str = "auto"
    admm_rho: float | None = None
    admm_relax: float = 1.5
    policy: ActiveSetPolicy = ActiveSetPolicy()
    solver: SolverConfig = SolverConfig(rel_tol=1e-12, abs_tol=1e-14)
    warm_start: object = field(default=None, compare=False)


@dataclass(frozen=True, eq=False)
class FittedModel:
    coef: np.ndarray
    predictions: np.ndarray
    y: np.ndarray
    loss: Loss
    regularizer: Regularizer
    active: list
    policy: ActiveSetPolicy = ActiveSetPolicy()
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.coef, self.predictions, self.y):
            arr.setflags(write=False)

    @property
    def hessian_weights(self):
        return self.loss.d2(self.y, self.predictions)

    @property
    def n(self):
        return self.y.size

    def predict(self, X):
        return np.asarray(X @ self.coef).ravel()


def _unpack(data, y=None):
    if isinstance(data, Dataset):
        return data.X, data.y if y is None else np.asarray(y, dtype=float)
    if y is not None:
        return data, np.asarray(y, dtype=float)
    X, y = data
    return X, np.asarray(y, dtype=float)


def _dense(X):
    return not sp.issparse(X)


def _gram(X, cols=None, weights=None):
    Xc = X if cols is None else X[:, cols]
    if weights is None:
        G = Xc.T @ Xc
    else:
        G = Xc.T @ (Xc.multiply(weights[:, None]) if sp.issparse(Xc) else Xc * weights[:, None])
    return G.toarray() if sp.issparse(G) else np.asarray(G)


def objective(X, y, loss, reg, beta):
    return float(np.sum(loss.value(y, X @ beta)) + reg.value(beta))


def optimality_residual(X, y, loss, reg, beta, policy=ActiveSetPolicy()):
    """Scaled distance of zero from the subdifferential of the objective.

    Returns ``||g||_inf / max(1, ||X^T l'(y, 0)||_inf)`` where ``g`` is the
    minimum-norm element of the subdifferential (computed exactly for plain l1
    and groups, by bounded least squares for transformed l1).
    """
    p = beta.size
    yhat = np.asarray(X @ beta).ravel()
    free = np.asarray(X.T @ loss.d1(y, yhat)).ravel() + reg.smooth_grad(beta)
    scale = max(1.0, float(np.abs(X.T @ loss.d1(y, np.zeros_like(y))).max()))
    shrink_coords = []
    general = []
    groups = []
    for term in reg.nonsmooth_terms:
        act = term_active_set(term, beta, policy)
        if term.kind == "l1_affine":
            A = term.rows(p)
            u = term.transform(beta)
            free = free + term.weight * np.asarray(A[act].T @ np.sign(u[act])).ravel()
            inact = np.setdiff1d(np.arange(A.shape[0]), act)
            if term.identity and term.c is None:
                shrink_coords.append((inact, term.weight))
            elif inact.size:
                general.append(term.weight * A[inact].T)
        else:
            active_mask = np.zeros(len(term.groups), dtype=bool)
            active_mask[act] = True
            for k, g in enumerate(term.groups):
                if active_mask[k]:
                    free[g] += term.weight * beta[g] / np.linalg.norm(beta[g])
                else:
                    groups.append((g, term.weight))
    res = free
    if general:
        B = sp.hstack(general).toarray()
        sol = lsq_linear(B, -res, bounds=(-1.0, 1.0), tol=1e-12)
        res = res + B @ sol.x
    for idx, w in shrink_coords:
        res[idx] = np.sign(res[idx]) * np.maximum(np.abs(res[idx]) - w, 0.0)
    for g, w in groups:
        nrm = np.linalg.norm(res[g])
        res[g] = 0.0 if nrm <= w else res[g] * (1 - w / nrm)
    return float(np.abs(res).max(initial=0.0)) / scale


def _finish(X, y, loss, reg, beta, cfg, stats):
    beta = np.array(beta, dtype=float)
    yhat = np.asarray(X @ beta, dtype=float).ravel()
    stats.setdefault("objective", objective(X, y, loss, reg, beta))
    if "optimality_residual" not in stats:
        stats["optimality_residual"] = optimality_residual(X, y, loss, reg, beta, cfg.policy)
    active = active_sets(reg, beta, cfg.policy)
    return FittedModel(beta, yhat, np.array(y, dtype=float), loss, reg, active, cfg.policy, stats)


def fit(data, loss="squared", reg=Regularizer(), cfg=None, y=None):
    """Minimize ``sum_i l(y_i, x_i^T beta) + r(beta)``.

    ``data`` is a :class:`Dataset`, an ``(X, y)`` pair, or ``X`` with ``y``
    passed separately.
    """
    cfg = cfg or FitConfig()
    X, y = _unpack(data, y)
    if not _dense(X):
        X = sp.csc_matrix(X)
    else:
        X = np.asarray(X, dtype=float)
    loss = get_loss(loss)
    if not (np.all(np.isfinite(y)) and (sp.issparse(X) or np.all(np.isfinite(X)))):
        raise InvalidSpec("data contain non-finite values")

    nonsmooth = reg.nonsmooth_terms
    method = cfg.method
    if method == "auto":
        if not nonsmooth:
            method = "direct" if loss.kind == "squared" else "newton"
        elif (
            loss.kind == "squared"
            and all(t.kind == "l1_affine" and t.identity and t.c is None for t in nonsmooth)
            and all(t.kind == "squared_l2" for t in reg.smooth_terms)
        ):
            method = "cd"
        elif any(t.kind == "l1_affine" and not t.identity for t in nonsmooth):
            method = "admm"
        else:
            method = "prox"

    stats = {"method": method, "work": 0.0}
    if method == "direct":
        if nonsmooth or loss.kind != "squared":
            raise InvalidSpec("direct fitting needs squared loss and a smooth regularizer")
        beta = _fit_quadratic(X, y, reg, cfg, stats)
    elif method == "newton":
        if nonsmooth:
            raise InvalidSpec("Newton fitting needs a smooth regularizer")
        beta = _newton(X, y, loss, reg, np.zeros(X.shape[1]) if cfg.warm_start is None else cfg.warm_start,
                       np.arange(X.shape[1]), cfg, stats)
        if beta is None:
            raise NonConvergence(stats.get("iterations", 0), np.nan, what="Newton")
    elif method == "cd":
        beta = _fit_cd(X, y, loss, reg, cfg, stats)
    elif method == "admm":
        beta = _fit_admm(X, y, loss, reg, cfg, stats)
    elif method == "prox":
        beta = _fit_prox(X, y, loss, reg, cfg, stats)
    else:
        raise InvalidSpec(f"unknown fit method {method!r}")
    return _finish(X, y, loss, reg, beta, cfg, stats)


# smooth problems --------------------------------------------------------------

def _fit_quadratic(X, y, reg, cfg, stats):
    n, p = X.shape
    Q = reg.smooth_hessian(p)
    rhs = np.asarray(X.T @ y).ravel()
    if _dense(X) and p < 5000:
        P = _gram(X) + Q.toarray()
        stats["work"] += p + p * p / (6 * n)
        try:
            beta = LDLFactor(P).solve(rhs)
        except SingularMatrix as exc:
            raise InvalidSpec(f"normal equations are singular (rank-deficient design, no penalty): {exc}") from exc
    else:
        from scipy.sparse.linalg import LinearOperator

        op = LinearOperator((p, p), matvec=lambda v: X.T @ (X @ v) + Q @ v, dtype=float)
        info = {}
        beta = cg_solve(op, rhs, cfg.solver, info)
        stats["work"] += info.get("iterations", 0)
    stats["iterations"] = 1
    return beta


def _restricted_parts(reg, beta, T, signs_by_term, groups_by_term):
    """Linear term and group blocks for the smooth problem on coordinates T."""
    p = beta.size
    pos = np.full(p, -1)
    pos[T] = np.arange(T.size)
    lin = np.zeros(T.size)
    for term, (rows, s) in signs_by_term:
        lin += term.weight * np.asarray(term.rows(p)[rows][:, T].T @ s).ravel()
    blocks = []
    for term, act in groups_by_term:
        for k in act:
            blocks.append((term.weight, pos[term.groups[k]]))
    Q = reg.smooth_hessian(p)[T][:, T]
    return lin, blocks, Q


def _newton(X, y, loss, reg, beta0, T, cfg, stats, signs_by_term=(), groups_by_term=(), max_newton=100):
    """Newton's method on the coordinates ``T`` with everything else fixed at 0.

    Active l1 components enter as the linear term ``w * s^T A beta`` and active
    groups as ``w * ||beta_g||``. Returns the full-length coefficient vector,
    or ``None`` if a group norm collapses to zero along the way.
    """
    n, p = X.shape
    lin, blocks, Q = _restricted_parts(reg, beta0, T, signs_by_term, groups_by_term)
    XT = X[:, T]
    b = np.array(beta0[T], dtype=float)
    scale = max(1.0, float(np.abs(X.T @ loss.d1(y, np.zeros(n))).max()))

    def F(bv):
        val = float(np.sum(loss.value(y, XT @ bv))) + 0.5 * float(bv @ (Q @ bv)) + float(lin @ bv)
        for w, g in blocks:
            val += w * np.linalg.norm(bv[g])
        return val

    its = 0
    fval = F(b)
    for its in range(1, max_newton + 1):
        z = np.asarray(XT @ b).ravel()
        grad = np.asarray(XT.T @ loss.d1(y, z)).ravel() + Q @ b + lin
        for w, g in blocks:
            nrm = np.linalg.norm(b[g])
            if nrm == 0.0:
                return None
            grad[g] += w * b[g] / nrm
        gnorm = np.abs(grad).max(initial=0.0)
        if gnorm <= 0.1 * cfg.tol * scale:
            break
        h = loss.d2(y, z)
        if T.size <= DENSE_NEWTON_MAX:
            H = _gram(XT, weights=h) + Q.toarray()
            for w, g in blocks:
                H[np.ix_(g, g)] += group_hessian_block(w, b[g])
            stats["work"] += T.size**2 / p + T.size**3 / (6 * n * p)
            try:
                step = LDLFactor(H).solve(grad)
            except SingularMatrix:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
        else:
            from scipy.sparse.linalg import LinearOperator

            def hv(v):
                out = np.asarray(XT.T @ (h * (XT @ v))).ravel() + Q @ v
                for w, g in blocks:
                    out[g] += group_hessian_block(w, b[g]) @ v[g]
                return out

            info = {}
            op = LinearOperator((T.size, T.size), matvec=hv, dtype=float)
            step = cg_solve(op, grad, SolverConfig(rel_tol=min(1e-2, gnorm), abs_tol=1e-14, max_iter=10 * T.size), info)
            stats["work"] += info.get("iterations", 0) * T.size / p
        t = 1.0
        decrease = float(grad @ step)
        while True:
            cand = b - t * step
            fc = F(cand)
            if fc <= fval - 1e-4 * t * decrease or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            # no progress possible in floating point
            b = cand
            break
        b, fval = cand, fc
    stats["iterations"] = stats.get("iterations", 0) + its
    out = np.zeros(p)
    out[T] = b
    return out


# polishing ---------------------------------------------------------------------

def _support(reg, beta, policy):
    """Free coordinates, fixed l1 signs and active groups implied by ``beta``."""
    p = beta.size
    free = np.ones(p, dtype=bool)
    signs_by_term = []
    groups_by_term = []
    for term in reg.nonsmooth_terms:
        act = term_active_set(term, beta, policy)
        if term.kind == "l1_affine":
            if not term.identity:
                raise InvalidSpec("restricted polishing handles plain l1 and groups only")
            mask = np.zeros(p, dtype=bool)
            mask[act] = True
            free &= mask
            signs_by_term.append((term, (act, np.sign(beta[act]))))
        else:
            mask = np.zeros(p, dtype=bool)
            for k in act:
                mask[term.groups[k]] = True
            free &= mask
            groups_by_term.append((term, act))
    return np.flatnonzero(free), signs_by_term, groups_by_term


def _polish(X, y, loss, reg, beta, cfg, stats):
    """Re-solve on the detected support; accept only if it is optimal."""
    T, signs_by_term, groups_by_term = _support(reg, beta, cfg.policy)
    if T.size == 0:
        cand = np.zeros_like(beta)
    else:
        if loss.kind == "squared" and not groups_by_term and T.size > X.shape[0] and reg.l2_weight() == 0:
            return None
        cand = _newton(X, y, loss, reg, beta, T, cfg, stats, signs_by_term, groups_by_term)
        if cand is None:
            return None
    # signs and group activity must be unchanged
    for term, (rows, s) in signs_by_term:
        if not np.array_equal(np.sign(cand[rows]), s):
            return None
    for term, act in groups_by_term:
        before = set(np.asarray(act).tolist())
        after = set(term_active_set(term, cand, cfg.policy).tolist())
        if before != after:
            return None
    res = optimality_residual(X, y, loss, reg, cand, cfg.policy)
    if res > cfg.tol:
        return None
    stats["optimality_residual"] = res
    stats["polished"] = True
    return cand


# coordinate descent -------------------------------------------------------------

def _fit_cd(X, y, loss, reg, cfg, stats):
    n, p = X.shape
    l1 = sum(t.weight for t in reg.nonsmooth_terms)
    l2 = reg.l2_weight()
    beta = np.zeros(p) if cfg.warm_start is None else np.array(cfg.warm_start, dtype=float)
    r = y - np.asarray(X @ beta).ravel()
    if _dense(X):
        Xf = np.asfortranarray(X)
        col_sq = np.einsum("ij,ij->j", Xf, Xf)
    else:
        Xc = sp.csc_matrix(X)
        Xc.sort_indices()
        col_sq = np.asarray(Xc.multiply(Xc).sum(axis=0)).ravel()
    ynorm = max(np.linalg.norm(y), 1.0)
    cd_tol = 1e-6 * ynorm
    sweeps_total = 0
    flops = 0.0
    while True:
        budget = cfg.max_iter - sweeps_total
        if budget <= 0:
            raise NonConvergence(sweeps_total, cd_tol, what="coordinate descent", module="model")
        if _dense(X):
            sweeps, visits, changes, ok = _cd.cd_dense(Xf, beta, r, l1, l2, col_sq, cd_tol, budget)
            flops += 2.0 * n * (visits + changes)
        else:
            sweeps, visits, changes, ok = _cd.cd_csc(
                Xc.indptr, Xc.indices, Xc.data, p, beta, r, l1, l2, col_sq, cd_tol, budget
            )
            flops += 2.0 * Xc.nnz / p * (visits + changes)
        sweeps_total += sweeps
        stats["work"] = flops / (2.0 * (Xc.nnz if not _dense(X) else n * p))
        if not ok:
            raise NonConvergence(sweeps_total, cd_tol, what="coordinate descent", module="model")
        polished = _polish(X, y, loss, reg, beta, cfg, stats)
        if polished is not None:
            stats["iterations"] = sweeps_total
            return polished
        if cd_tol < 1e-13 * ynorm:
            res = optimality_residual(X, y, loss, reg, beta, cfg.policy)
            stats["iterations"] = sweeps_total
            stats["optimality_residual"] = res
            log.warning("coordinate descent could not be polished; residual %.2e", res)
            return beta
        cd_tol *= 1e-2


# ADMM for transformed l1 ------------------------------------------------------------

def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _fit_admm(X, y, loss, reg, cfg, stats):
    nonsmooth = reg.nonsmooth_terms
    if loss.kind != "squared" or len(nonsmooth) != 1 or nonsmooth[0].kind != "l1_affine":
        raise InvalidSpec("ADMM handles squared loss with a single transformed l1 term")
    term = nonsmooth[0]
    n, p = X.shape
    A = term.rows(p)
    c = np.zeros(A.shape[0]) if term.c is None else np.asarray(term.c, dtype=float)
    lam = term.weight
    alpha = cfg.admm_relax
    Q = reg.smooth_hessian(p)
    XtX = _gram(X)
    AtA = (A.T @ A).toarray()
    # a stiff penalty settles the zero pattern of A beta quickly; the polish makes it exact
    rho = cfg.admm_rho or 100.0 * max(np.trace(XtX), 1e-8) / max(np.trace(AtA), 1e-8)
    M = XtX + Q.toarray() + rho * AtA
    factor = LDLFactor(M)
    stats["work"] += p + p * p / (6 * n)
    Xty = np.asarray(X.T @ y).ravel()
    beta = np.zeros(p) if cfg.warm_start is None else np.array(cfg.warm_start, dtype=float)
    z = A @ beta + c
    u = np.zeros_like(z)
    scale = max(1.0, np.linalg.norm(Xty))
    check_every = 25
    last_pattern = tried = None
    for it in range(1, cfg.max_iter + 1):
        beta = factor.solve(Xty + rho * (A.T @ (z - c - u)))
        Ab = A @ beta + c
        h = alpha * Ab + (1 - alpha) * z
        z_old = z
        z = _soft(h + u, lam / rho)
        u = u + h - z
        if it % check_every == 0:
            primal = np.linalg.norm(Ab - z)
            dual = rho * np.linalg.norm(A.T @ (z - z_old))
            pattern = z == 0.0
            # polish once the zero pattern has settled; retry only after it changes
            settled = last_pattern is not None and np.array_equal(pattern, last_pattern)
            if max(primal, dual) < 1e-3 * scale and settled and not np.array_equal(pattern, tried):
                tried = pattern
                cand = _polish_constrained(X, y, reg, term, z, XtX, Xty, cfg, stats)
                if cand is not None:
                    stats["iterations"] = it
                    stats["work"] += 2 * it * (p / n)
                    return cand
            last_pattern = pattern
            if max(primal, dual) < 1e-14 * scale:
                break
    stats["iterations"] = it
    stats["work"] += 2 * it * (p / n)  # back-substitutions, in matvec units
    log.warning("ADMM finished without a verified polish step")
    return beta


def _polish_constrained(X, y, reg, term, z, XtX, Xty, cfg, stats):
    """Solve the equality-constrained QP implied by the zero pattern of ``z``."""
    p = XtX.shape[0]
    A = term.rows(p)
    c = np.zeros(A.shape[0]) if term.c is None else np.asarray(term.c, dtype=float)
    lam = term.weight
    zero = np.flatnonzero(z == 0.0)
    nonzero = np.flatnonzero(z != 0.0)
    s = np.sign(z[nonzero])
    Q = reg.smooth_hessian(p).toarray()
    rhs_top = Xty - lam * np.asarray(A[nonzero].T @ s).ravel()
    Az = A[zero].toarray()
    Nrows, keep = prune_redundant_rows(Az, return_index=True)
    r = Nrows.shape[0]
    K = np.block([[XtX + Q, Nrows.T], [Nrows, np.zeros((r, r))]])
    try:
        sol = LDLFactor(K).solve(np.concatenate([rhs_top, -c[zero][keep]]))
    except SingularMatrix:
        return None
    beta, nu = sol[:p], sol[p:]
    u = A @ beta + c
    if not np.array_equal(np.sign(u[nonzero]), s):
        return None
    if np.abs(u[nonzero]).min(initial=np.inf) <= cfg.policy.absolute_threshold:
        return None
    if r == zero.size:
        # multipliers are the subgradient of the zero components
        if np.abs(nu).max(initial=0.0) > lam * (1 + 1e-9):
            return None
        res = 0.0
        grad = XtX @ beta - Xty + Q @ beta + lam * np.asarray(A[nonzero].T @ s).ravel() + Az.T @ nu
        scale = max(1.0, float(np.abs(Xty).max()))
        res = float(np.abs(grad).max()) / scale
    else:
        res = optimality_residual(X, y, get_loss("squared"), reg, beta, cfg.policy)
    if res > cfg.tol:
        return None
    stats["optimality_residual"] = res
    stats["polished"] = True
    return beta


# proximal gradient ---------------------------------------------------------------

def _spectral_norm_sq(X, iters=50, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(X.shape[1])
    v /= np.linalg.norm(v)
    val = 0.0
    for _ in range(iters):
        w = np.asarray(X.T @ (X @ v)).ravel()
        val = np.linalg.norm(w)
        if val == 0.0:
            return 0.0
        v = w / val
    return val


def _prox(reg, v, t):
    out = v
    for term in reg.nonsmooth_terms:
        if term.kind == "l1_affine":
            if not term.identity or term.c is not None:
                raise InvalidSpec("proximal gradient supports plain l1 and group penalties")
            out = _soft(out, t * term.weight)
    for term in reg.nonsmooth_terms:
        if term.kind == "group_l2":
            out = out.copy()
            for g in term.groups:
                nrm = np.linalg.norm(out[g])
                out[g] = 0.0 if nrm <= t * term.weight else out[g] * (1 - t * term.weight / nrm)
    return out


def _fit_prox(X, y, loss, reg, cfg, stats):
    n, p = X.shape
    curvature = 1.0 if loss.kind == "squared" else 0.25 * float(np.max(y * y))
    Q = reg.smooth_hessian(p)
    qnorm = float(np.abs(Q).sum(axis=1).max()) if Q.nnz else 0.0
    L = curvature * _spectral_norm_sq(X) * 1.01 + qnorm
    stats["work"] += 50
    step = 1.0 / L

    def grad(b):
        return np.asarray(X.T @ loss.d1(y, X @ b)).ravel() + Q @ b

    beta = np.zeros(p) if cfg.warm_start is None else np.array(cfg.warm_start, dtype=float)
    mom = beta.copy()
    t_k = 1.0
    scale = max(1.0, float(np.abs(grad(np.zeros(p))).max()))
    target = 1e-6 * scale
    it = 0
    while it < cfg.max_iter:
        it += 1
        new = _prox(reg, mom - step * grad(mom), step)
        gmap = (mom - new) / step
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t_k * t_k))
        # gradient-based adaptive restart
        if float(gmap @ (new - beta)) > 0:
            t_next = 1.0
            mom = new
        else:
            mom = new + ((t_k - 1) / t_next) * (new - beta)
        beta, t_k = new, t_next
        if np.abs(gmap).max() < target:
            cand = _polish(X, y, loss, reg, beta, cfg, stats)
            if cand is not None:
                stats["iterations"] = it
                stats["work"] += 2 * it
                return cand
            target *= 1e-2
            if target < 1e-15 * scale:
                break
    stats["iterations"] = it
    stats["work"] += 2 * it
    log.warning("proximal gradient finished without a verified polish step")
    return beta
