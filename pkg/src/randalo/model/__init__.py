"""Losses, regularizers and solvers for regularized linear (and kernel) models."""

import numpy as np

from .fit import FitConfig, FittedModel, fit, objective, optimality_residual
from .kernel import KERNELS, KernelModel, fit_kernel, linear_kernel, rbf_kernel
from .losses import LogisticLoss, Loss, SquaredLoss, get_loss
from .penalties import (
    ActiveSetPolicy,
    GroupL2,
    L1,
    Regularizer,
    SmoothQuadratic,
    SquaredL2,
    active_sets,
    contiguous_groups,
    elastic_net,
    first_difference,
    first_difference_matrix,
    group_lasso,
    lasso,
    regularizer_hessian,
    ridge,
)


def active_set(model, policy=None):
    """Per-term active index sets of a fitted model (``None`` for smooth terms)."""
    return active_sets(model.regularizer, np.asarray(model.coef), policy or model.policy)


def loss_derivative_vectors(model, y=None):
    """``(l', l'', dl'/dy)`` evaluated at ``(y_i, yhat_i)``."""
    y = model.y if y is None else np.asarray(y, dtype=float)
    if y.shape != model.predictions.shape:
        raise ValueError("y and predictions differ in length")
    z = model.predictions
    return model.loss.d1(y, z), model.loss.d2(y, z), model.loss.d1_dy(y, z)
