"""Randomized approximate leave-one-out risk estimation for regularized linear models."""

from .alo import (
    DiagSamples,
    ProbeMatrix,
    RiskFunction,
    RiskReport,
    alo_correct,
    bks_alo,
    bks_diag_samples,
    debias_regression,
    exact_alo,
    kfold_cv,
    kfold_cv_kernel,
    mmse_diag,
    plugin_risk,
    randalo,
    ridge_loo_shortcut,
    truncated_normal_mean,
)
from .data import Dataset
from .errors import RandALOError
from .jacobian import JvpOracle, build_oracle, exact_diag, normalize_generic_jacobian
from .linops import SolverConfig
from .model import FitConfig, FittedModel, fit

__version__ = "0.1.0"
