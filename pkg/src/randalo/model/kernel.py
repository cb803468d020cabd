"""Kernel ridge / kernel logistic regression in the dual.

The model is ``f = K alpha`` minimizing ``sum_i l(y_i, f_i) + lam/2 alpha^T K alpha``;
the feature map is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidSpec, NonConvergence, SingularMatrix
from ..linops import LDLFactor, SolverConfig, cg_solve
from .losses import Loss, get_loss


def linear_kernel(A, B=None):
    B = A if B is None else B
    return np.asarray(A @ B.T, dtype=float)


def rbf_kernel(A, B=None, gamma=1.0):
    """``exp(-gamma * ||a - b||^2)``"""
    B = A if B is None else B
    sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


KERNELS = {"linear": linear_kernel, "rbf": rbf_kernel}


@dataclass(frozen=True, eq=False)
class KernelModel:
    dual_coef: np.ndarray
    gram: np.ndarray
    lam: float
    predictions: np.ndarray
    y: np.ndarray
    loss: Loss
    stats: dict = field(default_factory=dict)

    @property
    def hessian_weights(self):
        return self.loss.d2(self.y, self.predictions)

    @property
    def n(self):
        return self.y.size

    def predict(self, K_test_train):
        return K_test_train @ self.dual_coef


def _solve_spd(M, b, solver, stats):
    if M.shape[0] < 5000:
        try:
            return LDLFactor(M).solve(b)
        except SingularMatrix:
            pass
    info = {}
    x = cg_solve(M, b, solver, info)
    stats["cg_iterations"] = stats.get("cg_iterations", 0) + info.get("iterations", 0)
    return x


def fit_kernel(K, y, loss="squared", lam=1.0, tol=1e-10, max_iter=100, solver=SolverConfig(rel_tol=1e-12, abs_tol=1e-14)):
    """Fit ``f = K alpha`` by a direct solve (squared loss) or Newton's method.

    The Newton system ``(H K + lam I) d = -(l' + lam alpha)`` is symmetrized as
    ``(K + lam H^{-1}) d = -H^{-1}(l' + lam alpha)`` and solved by LDL or CG.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    loss = get_loss(loss)
    n = y.size
    if K.shape != (n, n):
        raise InvalidSpec(f"Gram matrix has shape {K.shape}, expected ({n}, {n})")
    if lam <= 0:
        raise InvalidSpec("kernel models need lam > 0")
    stats = {"method": "direct" if loss.kind == "squared" else "newton", "work": 0.0}
    if loss.kind == "squared":
        alpha = _solve_spd(K + lam * np.eye(n), y, solver, stats)
        stats["iterations"] = 1
    else:
        alpha = np.zeros(n)
        f = np.zeros(n)

        def objective(a, fv):
            return float(np.sum(loss.value(y, fv))) + 0.5 * lam * float(a @ fv)

        obj = objective(alpha, f)
        scale = max(1.0, float(np.abs(loss.d1(y, np.zeros(n))).max()))
        for it in range(1, max_iter + 1):
            F = loss.d1(y, f) + lam * alpha
            if np.abs(F).max() <= tol * scale:
                break
            h = loss.d2(y, f)
            M = K + lam * np.diag(1.0 / h)
            step = _solve_spd(M, -F / h, solver, stats)
            Kstep = K @ step
            t = 1.0
            slope = float((K @ F) @ step)
            while True:
                cand, fcand = alpha + t * step, f + t * Kstep
                oc = objective(cand, fcand)
                if oc <= obj + 1e-4 * t * slope or t < 1e-12:
                    break
                t *= 0.5
            alpha, f, obj = cand, fcand, oc
        else:
            raise NonConvergence(max_iter, float(np.abs(F).max()), what="kernel Newton", module="model")
        stats["iterations"] = it
    f = K @ alpha
    stats["optimality_residual"] = float(np.abs(loss.d1(y, f) + lam * alpha).max())
    return KernelModel(alpha, K, float(lam), f, y, loss, stats)
