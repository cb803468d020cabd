"""Regularizers written as sums of terms ``r_k(A_k beta + c_k)``.

Smooth terms (:class:`SquaredL2`, :class:`SmoothQuadratic`) are always part of
the active set. Non-smooth terms (:class:`L1`, :class:`GroupL2`) are
non-differentiable only where their argument vanishes, which is the structure
the Jacobian-vector product routes rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import DegenerateGroup, InvalidSpec


@dataclass(frozen=True)
class ActiveSetPolicy:
    relative_threshold: float = 1e-8
    absolute_threshold: float = 1e-10

    def __post_init__(self):
        if self.relative_threshold < 0 or self.absolute_threshold < 0:
            raise ValueError("active-set thresholds must be nonnegative")

    def mask(self, measure):
        measure = np.abs(np.asarray(measure, dtype=float))
        if measure.size == 0:
            return np.zeros(0, dtype=bool)
        cut = max(self.absolute_threshold, self.relative_threshold * measure.max())
        return measure > cut


@dataclass(frozen=True, eq=False)
class SquaredL2:
    """``weight / 2 * ||beta||^2``"""

    weight: float
    kind = "squared_l2"
    smooth = True

    def value(self, beta):
        return 0.5 * self.weight * float(beta @ beta)

    def grad(self, beta):
        return self.weight * beta

    def hessian(self, p):
        return self.weight * sp.identity(p, format="csr")


@dataclass(frozen=True, eq=False)
class SmoothQuadratic:
    """``1/2 beta^T G beta`` with G symmetric PSD."""

    G: object
    kind = "smooth_quadratic"
    smooth = True

    def value(self, beta):
        return 0.5 * float(beta @ (self.G @ beta))

    def grad(self, beta):
        return np.asarray(self.G @ beta).ravel()

    def hessian(self, p):
        return sp.csr_matrix(self.G)


@dataclass(frozen=True, eq=False)
class L1:
    """``weight * ||A beta + c||_1``; ``A=None`` means the identity (plain lasso)."""

    weight: float
    A: object = None
    c: object = None
    kind = "l1_affine"
    smooth = False

    @property
    def identity(self):
        return self.A is None

    def transform(self, beta):
        u = beta if self.A is None else np.asarray(self.A @ beta).ravel()
        if self.c is not None:
            u = u + self.c
        return u

    def measure(self, beta):
        return np.abs(self.transform(beta))

    def value(self, beta):
        return self.weight * float(np.abs(self.transform(beta)).sum())

    def rows(self, p):
        """The matrix A as a sparse CSR matrix."""
        if self.A is None:
            return sp.identity(p, format="csr")
        return sp.csr_matrix(self.A)


@dataclass(frozen=True, eq=False)
class GroupL2:
    """``weight * sum_k ||beta[g_k]||_2`` over disjoint index groups covering all coordinates."""

    weight: float
    groups: tuple = field(default_factory=tuple)
    kind = "group_l2"
    smooth = False

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(np.asarray(g, dtype=np.intp) for g in self.groups))

    def measure(self, beta):
        return np.array([np.linalg.norm(beta[g]) for g in self.groups])

    def value(self, beta):
        return self.weight * float(self.measure(beta).sum())


@dataclass(frozen=True, eq=False)
class Regularizer:
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            w = getattr(t, "weight", 0.0)
            if w < 0:
                raise InvalidSpec(f"{t.kind} weight must be nonnegative, got {w}")

    def value(self, beta):
        return sum(t.value(beta) for t in self.terms)

    @property
    def smooth_terms(self):
        return [t for t in self.terms if t.smooth]

    @property
    def nonsmooth_terms(self):
        return [t for t in self.terms if not t.smooth]

    def kinds(self):
        return {t.kind for t in self.terms}

    def l2_weight(self):
        return sum(t.weight for t in self.terms if t.kind == "squared_l2")

    def smooth_grad(self, beta):
        g = np.zeros_like(beta)
        for t in self.smooth_terms:
            g += t.grad(beta)
        return g

    def smooth_hessian(self, p):
        H = sp.csr_matrix((p, p))
        for t in self.smooth_terms:
            H = H + t.hessian(p)
        return H


# convenience constructors ---------------------------------------------------

def ridge(lam):
    return Regularizer((SquaredL2(lam),))


def lasso(lam):
    return Regularizer((L1(lam),))


def elastic_net(l1, l2):
    return Regularizer((SquaredL2(l2), L1(l1)))


def first_difference_matrix(p):
    """(p-1) x p matrix with rows ``e_{j+1} - e_j``."""
    return sp.diags([-np.ones(p - 1), np.ones(p - 1)], [0, 1], shape=(p - 1, p), format="csr")


def first_difference(lam, p):
    return Regularizer((L1(lam, A=first_difference_matrix(p)),))


def group_lasso(lam, groups, l2=0.0):
    terms = (GroupL2(lam, tuple(groups)),)
    if l2:
        terms = (SquaredL2(l2),) + terms
    return Regularizer(terms)


def contiguous_groups(p, size):
    return [np.arange(s, min(s + size, p)) for s in range(0, p, size)]


# active sets and Hessians ---------------------------------------------------

def term_active_set(term, beta, policy=ActiveSetPolicy()):
    """Indices of the components of a non-smooth term where it is differentiable."""
    return np.flatnonzero(policy.mask(term.measure(beta)))


def active_sets(reg, beta, policy=ActiveSetPolicy()):
    """Per-term active index sets; ``None`` for smooth (always active) terms."""
    return [None if t.smooth else term_active_set(t, beta, policy) for t in reg.terms]


def group_hessian_block(weight, b):
    """Hessian of ``weight * ||b||`` at ``b != 0``."""
    nrm = np.linalg.norm(b)
    return (weight / nrm) * (np.eye(b.size) - np.outer(b, b) / nrm**2)


def regularizer_hessian(reg, beta, active, policy=ActiveSetPolicy()):
    """Sum over active terms of ``A_k^T hess r_k(A_k beta + c_k) A_k`` as a sparse matrix.

    L1 terms contribute nothing (piecewise linear); each active group adds its
    projected curvature block.
    """
    p = beta.size
    H = reg.smooth_hessian(p)
    for term, act in zip(reg.terms, active):
        if term.kind != "group_l2" or act is None:
            continue
        rows, cols, vals = [], [], []
        for k in act:
            g = term.groups[k]
            b = beta[g]
            if np.linalg.norm(b) <= policy.absolute_threshold:
                raise DegenerateGroup(f"group {k} is active but ||beta_g|| = {np.linalg.norm(b):.2e}")
            block = group_hessian_block(term.weight, b)
            rows.append(np.repeat(g, g.size))
            cols.append(np.tile(g, g.size))
            vals.append(block.ravel())
        if rows:
            H = H + sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(p, p)
            )
    return sp.csr_matrix(H)


def inactive_constraints(reg, beta, active):
    """Rows ``A_k`` of inactive non-smooth components, stacked as a sparse matrix."""
    p = beta.size
    blocks = []
    for term, act in zip(reg.terms, active):
        if act is None:
            continue
        if term.kind == "l1_affine":
            A = term.rows(p)
            inactive = np.setdiff1d(np.arange(A.shape[0]), act)
            if inactive.size:
                blocks.append(A[inactive])
        elif term.kind == "group_l2":
            idx = [term.groups[k] for k in range(len(term.groups)) if k not in set(act.tolist())]
            if idx:
                cols = np.concatenate(idx)
                blocks.append(sp.csr_matrix((np.ones(cols.size), (np.arange(cols.size), cols)), shape=(cols.size, p)))
    if not blocks:
        return None
    return sp.vstack(blocks, format="csr")
