"""Robust mixtures of linear regressions via M and GM (Mallows/Schweppe) estimation."""

__version__ = "0.1.0"

from ._accel import backend
from .core import (EstimatorKind, EstimatorSpec, FitConfig, FitResult, MixtureParams, RegressionData,
                   complete_loglik, fit, fit_from, icl)
from .inference import CovarianceReport, sandwich_covariance
from .psi import Family, PsiKernel, scale_constant_a
from .scatter import LeverageWeights, McdEstimate, fast_mcd, leverage_weights, mahalanobis_distances

__all__ = [
    "CovarianceReport", "EstimatorKind", "EstimatorSpec", "Family", "FitConfig", "FitResult", "LeverageWeights",
    "McdEstimate", "MixtureParams", "PsiKernel", "RegressionData", "backend", "complete_loglik", "fast_mcd", "fit",
    "fit_from", "icl", "leverage_weights", "mahalanobis_distances", "sandwich_covariance", "scale_constant_a",
]
