"""Jacobian-vector product oracles ``z -> J~ z`` for fitted linear models.

``J~ = X (X^T H X + hess r)^{-1} X^T H`` generalizes to non-smooth penalties
through an equality-constrained QP: minimize ``1/2 v^T P v - v^T X^T H z``
subject to ``A_k v = 0`` for every inactive component ``k``, with
``P = X^T H X + sum_{k active} A_k^T hess r_k A_k``; then ``J~ z = X v*``.

:func:`build_oracle` picks the cheapest route for a model; each route builds
its factorization once and reuses it for every probe.
"""

from __future__ import annotations

import threading
import time

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .errors import (
    DegenerateGroup,
    SingularKkt,
    SingularMatrix,
    SingularSystem,
    UnsupportedSpec,
    ZeroDerivative,
)
from .linops import DIRECT_MAX_DIM, KktSolver, LDLFactor, SolverConfig, cg_solve, prune_redundant_rows
from .model.kernel import KernelModel
from .model.penalties import (
    active_sets,
    group_hessian_block,
    inactive_constraints,
    regularizer_hessian,
)

ROUTES = (
    "generic_qp",
    "elastic_net_closed_form",
    "generalized_l1_qp",
    "group_lasso_closed_form",
    "kernel_ridge",
    "ridge",
)


class JvpOracle:
    """Linear map ``z -> J~ z`` on R^n.

    ``apply`` accepts a vector or an ``n x k`` block. ``solve_counter`` counts
    inner linear solves (one per column); ``work`` accumulates cost in units of
    one full pass ``X v`` over the training data.
    """

    def __init__(self, n, apply_block, route, setup_work=0.0, work_per_apply=0.0, info=None):
        self.n = n
        self.route = route
        self._apply = apply_block
        self.solve_counter = 0
        self.setup_work = float(setup_work)
        self.setup_time = 0.0
        self.work = float(setup_work)
        self.work_per_apply = float(work_per_apply)
        self.info = info or {}
        self._lock = threading.Lock()

    def apply(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape[0] != self.n:
            raise ValueError(f"expected length-{self.n} input, got shape {z.shape}")
        single = z.ndim == 1
        Z = z[:, None] if single else z
        out = np.asarray(self._apply(Z), dtype=float).reshape(Z.shape)
        with self._lock:
            self.solve_counter += Z.shape[1]
            self.work += Z.shape[1] * self.work_per_apply
        return out[:, 0] if single else out

    __call__ = apply

    def as_operator(self):
        return LinearOperator((self.n, self.n), matvec=self.apply, matmat=self.apply, dtype=float)

    def __repr__(self):
        return f"JvpOracle(n={self.n}, route={self.route!r}, solves={self.solve_counter})"


def zero_oracle(n, route):
    return JvpOracle(n, lambda Z: np.zeros_like(Z), route)


def _design(data):
    X = getattr(data, "X", data)
    if sp.issparse(X):
        return sp.csr_matrix(X)
    return np.asarray(X, dtype=float)


def _nnz(X):
    return X.nnz if sp.issparse(X) else X.size


def _spd_solver(M_dense=None, M_op=None, cfg=SolverConfig(), singular=SingularSystem, pinv=False):
    """Solver for a symmetric system: cached LDL when dense, CG otherwise."""
    if M_dense is not None and cfg.method in ("auto", "direct-ldl") and M_dense.shape[0] < DIRECT_MAX_DIM:
        try:
            fac = LDLFactor(M_dense, error=singular)
            return fac.solve
        except SingularMatrix:
            if not pinv:
                raise
            w, V = np.linalg.eigh(M_dense)
            keep = w > w.max() * M_dense.shape[0] * np.finfo(float).eps
            inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
            return lambda B: V @ (inv_w[:, None] * (V.T @ B)) if B.ndim == 2 else V @ (inv_w * (V.T @ B))
    op = M_op if M_op is not None else M_dense

    def solve(B):
        if B.ndim == 1:
            return cg_solve(op, B, cfg)
        return np.column_stack([cg_solve(op, B[:, j], cfg) for j in range(B.shape[1])])

    return solve


# closed-form routes ----------------------------------------------------------------

def _columns_oracle(X, h, cols, l2, cfg, route, extra_blocks=(), pinv=False):
    """``X_S (X_S^T H X_S + l2 I + blocks)^{-1} X_S^T H`` on the columns ``cols``."""
    n, p = X.shape
    k = cols.size
    if k == 0:
        return zero_oracle(n, route)
    XS = X[:, cols]
    density = _nnz(XS) / max(n * k, 1)
    small_primal = k < DIRECT_MAX_DIM and not sp.issparse(X)
    if small_primal:
        HX = XS * h[:, None]
        M = np.asarray(XS.T @ HX)
        if l2:
            M[np.diag_indices(k)] += l2
        for w, g, blk in extra_blocks:
            M[np.ix_(g, g)] += blk
        solve = _spd_solver(M, cfg=cfg, pinv=pinv)
        setup = k * k / p + k**3 / (6 * n * p)
        per = 2 * k / p + k * k / (n * p)
    else:
        def mv(v):
            out = np.asarray(XS.T @ (h * (XS @ v))).ravel() + l2 * v
            for w, g, blk in extra_blocks:
                out[g] += blk @ v[g]
            return out

        op = LinearOperator((k, k), matvec=mv, dtype=float)
        solve = _spd_solver(M_op=op, cfg=cfg)
        setup = 0.0
        # one CG iteration = two passes over X_S; count a nominal sqrt(k) iterations
        per = 2 * density * k / p * max(1.0, np.sqrt(k))

    def apply(Z):
        rhs = np.asarray(XS.T @ (h[:, None] * Z))
        return np.asarray(XS @ solve(rhs))

    return JvpOracle(n, apply, route, setup, per, {"active_columns": k})


def _kernel_form_oracle(K, h, lam, cfg, route, n_features=None):
    """``K (K + lam H^{-1})^{-1}``"""
    n = K.shape[0]
    M = K + lam * np.diag(1.0 / h)
    solve = _spd_solver(M, cfg=cfg)
    p = n_features or n
    setup = n**3 / (6 * n * p)
    per = (2 * n * n) / (n * p)

    def apply(Z):
        return K @ solve(Z)

    return JvpOracle(n, apply, route, setup, per)


def ridge_oracle(model, X, cfg=SolverConfig()):
    """Ridge (smooth squared-l2 penalty): J~ = X (X^T H X + lam I)^{-1} X^T H."""
    X = _design(X)
    n, p = X.shape
    lam = model.regularizer.l2_weight()
    h = model.hessian_weights
    if lam > 0 and p > n and not sp.issparse(X):
        K = X @ X.T
        orc = _kernel_form_oracle(K, h, lam, cfg, "ridge", p)
        orc.work += n  # forming K
        return orc
    return _columns_oracle(X, h, np.arange(p), lam, cfg, "ridge")


def elastic_net_oracle(model, X, policy=None, cfg=SolverConfig()):
    """Lasso / elastic net: restrict to the active columns ``S = {j : beta_j != 0}``."""
    X = _design(X)
    policy = policy or model.policy
    reg = model.regularizer
    beta = np.asarray(model.coef)
    free = np.ones(beta.size, dtype=bool)
    for term, act in zip(reg.terms, active_sets(reg, beta, policy)):
        if act is None:
            continue
        if term.kind != "l1_affine" or not term.identity:
            raise UnsupportedSpec("elastic-net route needs plain l1 terms")
        mask = np.zeros(beta.size, dtype=bool)
        mask[act] = True
        free &= mask
    cols = np.flatnonzero(free)
    l2 = reg.l2_weight()
    if l2 == 0 and cols.size > X.shape[0]:
        raise SingularSystem(f"{cols.size} active columns exceed n = {X.shape[0]} with no ridge term")
    return _columns_oracle(X, model.hessian_weights, cols, l2, cfg, "elastic_net_closed_form")


def group_lasso_oracle(model, X, policy=None, cfg=SolverConfig()):
    """Group lasso: restrict to active groups and add each group's curvature block.

    The restricted system is solved with a pseudo-inverse if it is singular.
    """
    X = _design(X)
    policy = policy or model.policy
    reg = model.regularizer
    beta = np.asarray(model.coef)
    acts = active_sets(reg, beta, policy)
    coords = []
    raw_blocks = []
    for term, act in zip(reg.terms, acts):
        if act is None:
            continue
        if term.kind != "group_l2":
            raise UnsupportedSpec("group-lasso route needs group penalties only")
        for k in act:
            g = term.groups[k]
            if np.linalg.norm(beta[g]) <= policy.absolute_threshold:
                raise DegenerateGroup(f"group {k} is active with vanishing norm")
            coords.append(g)
            raw_blocks.append((term.weight, g))
    if not coords:
        return zero_oracle(X.shape[0], "group_lasso_closed_form")
    cols = np.sort(np.concatenate(coords))
    pos = np.full(beta.size, -1)
    pos[cols] = np.arange(cols.size)
    blocks = [(w, pos[g], group_hessian_block(w, beta[g])) for w, g in raw_blocks]
    return _columns_oracle(
        X, model.hessian_weights, cols, reg.l2_weight(), cfg, "group_lasso_closed_form", blocks, pinv=True
    )


def kernel_oracle(model, cfg=SolverConfig()):
    """Kernel ridge penalty: ``J~ = K (K + lam H^{-1})^{-1}``."""
    if not isinstance(model, KernelModel):
        raise UnsupportedSpec("kernel route needs a KernelModel")
    return _kernel_form_oracle(model.gram, model.hessian_weights, model.lam, cfg, "kernel_ridge")


# constrained-QP routes ------------------------------------------------------------

def _qp_oracle(X, h, P_reg, N, cfg, route):
    n, p = X.shape
    if N is not None and sp.issparse(N):
        N = N.toarray()
    r_max = 0 if N is None else N.shape[0]
    dense = not sp.issparse(X) and p + r_max < DIRECT_MAX_DIM and cfg.method in ("auto", "direct-ldl")
    if dense:
        P = np.asarray(X.T @ (X * h[:, None])) + P_reg.toarray()
    else:
        def mv(v):
            return np.asarray(X.T @ (h * (X @ v))).ravel() + P_reg @ v

        P = LinearOperator((p, p), matvec=mv, dtype=float)
    try:
        solver = KktSolver(P, N, cfg)
    except SingularMatrix as exc:
        raise SingularKkt(f"JVP quadratic program has no unique solution: {exc}") from exc
    dim = p + solver.r
    setup = (p + dim**3 / (6 * n * p)) if solver.method == "direct-ldl" else 0.0
    per = 2.0 + (dim * dim) / (n * p) if solver.method == "direct-ldl" else 2.0 * np.sqrt(dim)

    def apply(Z):
        v, _ = solver.solve(np.asarray(X.T @ (h[:, None] * Z)))
        return np.asarray(X @ v)

    return JvpOracle(n, apply, route, setup, per, {"constraints": solver.r, "method": solver.method})


def generic_oracle(model, X, policy=None, cfg=SolverConfig()):
    """Generic KKT route valid for any regularizer of the supported form."""
    X = _design(X)
    policy = policy or model.policy
    reg = model.regularizer
    beta = np.asarray(model.coef)
    active = active_sets(reg, beta, policy)
    P_reg = regularizer_hessian(reg, beta, active, policy)
    N = inactive_constraints(reg, beta, active)
    return _qp_oracle(X, model.hessian_weights, P_reg, N, cfg, "generic_qp")


def generalized_l1_oracle(model, X, policy=None, cfg=SolverConfig()):
    """Transformed l1 ``lam ||A beta||_1``: constrain ``a_j^T v = 0`` where ``a_j^T beta = 0``."""
    X = _design(X)
    policy = policy or model.policy
    reg = model.regularizer
    beta = np.asarray(model.coef)
    p = beta.size
    rows = []
    for term in reg.nonsmooth_terms:
        if term.kind != "l1_affine":
            raise UnsupportedSpec("generalized-l1 route needs transformed l1 terms only")
        zero = ~policy.mask(term.measure(beta))
        if zero.any():
            rows.append(term.rows(p)[np.flatnonzero(zero)])
    N = prune_redundant_rows(sp.vstack(rows).toarray()) if rows else None
    P_reg = reg.smooth_hessian(p)
    return _qp_oracle(X, model.hessian_weights, P_reg, N, cfg, "generalized_l1_qp")


def select_route(model):
    if isinstance(model, KernelModel):
        return "kernel_ridge"
    reg = model.regularizer
    smooth_ok = all(t.kind == "squared_l2" for t in reg.smooth_terms)
    nonsmooth = reg.nonsmooth_terms
    if not nonsmooth and smooth_ok:
        return "ridge"
    if nonsmooth and smooth_ok and all(t.kind == "l1_affine" and t.identity for t in nonsmooth):
        return "elastic_net_closed_form"
    if nonsmooth and all(t.kind == "l1_affine" and not t.identity for t in nonsmooth):
        return "generalized_l1_qp"
    if nonsmooth and smooth_ok and all(t.kind == "group_l2" for t in nonsmooth):
        return "group_lasso_closed_form"
    return "generic_qp"


def build_oracle(model, data=None, policy=None, cfg=SolverConfig(), route=None):
    """Build the cheapest valid JVP oracle for ``model`` (or the forced ``route``)."""
    if not np.all(model.hessian_weights > 0):
        raise UnsupportedSpec("loss must be strictly convex in the prediction (l'' > 0)")
    t0 = time.perf_counter()
    oracle = _build(model, data, policy, cfg, route or select_route(model))
    oracle.setup_time = time.perf_counter() - t0
    return oracle


def _build(model, data, policy, cfg, route):
    if route == "kernel_ridge":
        return kernel_oracle(model, cfg)
    if data is None:
        raise ValueError("linear-model oracles need the design matrix")
    if route == "ridge":
        return ridge_oracle(model, data, cfg)
    if route == "elastic_net_closed_form":
        return elastic_net_oracle(model, data, policy, cfg)
    if route == "generalized_l1_qp":
        return generalized_l1_oracle(model, data, policy, cfg)
    if route == "group_lasso_closed_form":
        return group_lasso_oracle(model, data, policy, cfg)
    if route == "generic_qp":
        return generic_oracle(model, data, policy, cfg)
    raise UnsupportedSpec(f"unknown route {route!r}")


def jvp_generic(model, data, z, policy=None, cfg=SolverConfig()):
    return generic_oracle(model, data, policy, cfg).apply(z)


def jvp_elastic_net(model, data, z, policy=None, cfg=SolverConfig()):
    return elastic_net_oracle(model, data, policy, cfg).apply(z)


def jvp_generalized_l1(model, data, z, policy=None, cfg=SolverConfig()):
    return generalized_l1_oracle(model, data, policy, cfg).apply(z)


def jvp_group_lasso(model, data, z, policy=None, cfg=SolverConfig()):
    return group_lasso_oracle(model, data, policy, cfg).apply(z)


def jvp_kernel(model, z, cfg=SolverConfig()):
    return kernel_oracle(model, cfg).apply(z)


# utilities ---------------------------------------------------------------------------

def normalize_generic_jacobian(J, g, h, dy, route="normalized"):
    """Turn a raw Jacobian ``d yhat / d y`` into ``J~ = -J diag(h / dy)``.

    ``J`` is a matrix or a callable applied to vectors/blocks. ``g`` is unused
    by the scaling but accepted to mirror the loss-derivative triple.
    """
    h = np.asarray(h, dtype=float)
    dy = np.asarray(dy, dtype=float)
    if np.any(dy == 0):
        raise ZeroDerivative(f"d l'/d y vanishes at indices {np.flatnonzero(dy == 0)[:5].tolist()}")
    scale = h / dy
    n = scale.size
    if callable(J):
        def raw(Z):
            try:
                return J(Z)
            except (ValueError, TypeError):
                return np.column_stack([J(Z[:, j]) for j in range(Z.shape[1])])
    else:
        Jm = J
        def raw(Z):
            return np.asarray(Jm @ Z)

    return JvpOracle(n, lambda Z: -np.asarray(raw(scale[:, None] * Z)).reshape(Z.shape), route)


def exact_diag(oracle, block=64):
    """Diagonal of ``J~`` from ``n`` unit-vector applications."""
    n = oracle.n
    out = np.empty(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        E = np.zeros((n, stop - start))
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        out[start:stop] = oracle.apply(E)[np.arange(start, stop), np.arange(stop - start)]
    return out


def dense_jacobian(oracle, block=64):
    n = oracle.n
    cols = [oracle.apply(np.eye(n)[:, s : s + block]) for s in range(0, n, block)]
    return np.hstack(cols)


def refit_directional_derivative(refit, y, direction, eps=1e-5):
    """Central difference ``(yhat(y + eps d) - yhat(y - eps d)) / (2 eps)``.

    ``refit(y)`` returns a fitted model. Also reports whether the active sets of
    the two perturbed fits agree (required for the comparison to be valid).
    """
    plus = refit(y + eps * direction)
    minus = refit(y - eps * direction)
    same = all(
        (a is None and b is None) or np.array_equal(a, b) for a, b in zip(plus.active, minus.active)
    ) if hasattr(plus, "active") else True
    return (plus.predictions - minus.predictions) / (2 * eps), same


def finite_difference_jvp(refit, model, z, eps=1e-5):
    """``J~ z`` from refits: ``J~ z = -J (h / dy * z)`` with ``J`` by central differences."""
    y = model.y
    h = model.loss.d2(y, model.predictions)
    dy = model.loss.d1_dy(y, model.predictions)
    jz, same = refit_directional_derivative(refit, y, h / dy * z, eps)
    return -jz, same
