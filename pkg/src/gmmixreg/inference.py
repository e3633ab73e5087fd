"""Sandwich standard errors for the fitted coefficients and mixing proportions.

Scales are held at their fitted values.  The parameter vector used for
differentiation is ``(beta_1, ..., beta_g, pi_1, ..., pi_{g-1})``; the last
mixing proportion is implied by the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import EstimatorKind, EstimatorSpec, FitResult, MixtureParams, RegressionData
from .errors import InvalidDimensionsError, NonIdentifiableError
from .scatter import LeverageWeights

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class CovarianceReport:
    M_hat: np.ndarray
    Q_hat: np.ndarray
    V: np.ndarray
    standard_errors: np.ndarray
    names: tuple[str, ...]
    n: int
    last_mixing_se: float

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.standard_errors.tolist()))


def parameter_names(g: int, p: int) -> tuple[str, ...]:
    betas = [f"beta_{i + 1}_{k}" for i in range(g) for k in range(p)]
    return tuple(betas + [f"pi_{i + 1}" for i in range(g - 1)])


def pack_theta(params: MixtureParams) -> np.ndarray:
    return np.concatenate([params.coefficients.ravel(), params.mixing[:-1]])


def unpack_theta(theta: np.ndarray, g: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    B = np.ascontiguousarray(theta[: g * p].reshape(g, p))
    head = theta[g * p:]
    pi = np.concatenate([head, [1.0 - head.sum()]])
    return B, pi


def _eta(spec: EstimatorSpec, T: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = spec.kernel
    if spec.kind is EstimatorKind.M:
        return k.psi(T)
    if spec.kind is EstimatorKind.GM_MALLOWS:
        return w * k.psi(T)
    return w * k.psi(T / w)


def estimating_functions(design, response, theta, scales, spec: EstimatorSpec, weights) -> np.ndarray:
    """Rows ``H(t_j, theta)`` for every observation, shape (n, g*p + g - 1)."""
    X = np.ascontiguousarray(np.atleast_2d(design), dtype=float)
    y = np.ascontiguousarray(np.atleast_1d(response), dtype=float)
    sigma = np.ascontiguousarray(scales, dtype=float)
    g, p = sigma.size, X.shape[1]
    B, pi = unpack_theta(np.asarray(theta, dtype=float), g, p)
    Z, _ = _kernels.e_step(X, y, B, sigma, pi)
    T = (y[:, None] - X @ B.T) / sigma
    w = np.broadcast_to(np.asarray(weights, dtype=float).reshape(-1, 1), T.shape)
    eta = _eta(spec, T, w)
    blocks = [(Z[:, i] * eta[:, i])[:, None] * X for i in range(g)]
    blocks.append(Z[:, : g - 1] - pi[: g - 1])
    return np.hstack(blocks)


def estimating_function(x, y: float, params: MixtureParams, spec: EstimatorSpec, leverage_weight: float = 1.0) -> np.ndarray:
    """``H`` at a single observation ``(x, y)``; ``x`` includes the leading 1."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    H = estimating_functions(x, [y], pack_theta(params), params.scales, spec, [leverage_weight])
    return H[0]


def mean_estimating_function(data: RegressionData, params: MixtureParams, spec: EstimatorSpec,
                             leverage: LeverageWeights | None) -> np.ndarray:
    w = _weights(spec, leverage, data.n)
    return estimating_functions(data.design, data.response, pack_theta(params), params.scales, spec, w).mean(axis=0)


def jacobian(func, theta: np.ndarray, stencil: int = 3) -> np.ndarray:
    """Central finite-difference Jacobian of a vector function of ``theta``."""
    theta = np.asarray(theta, dtype=float)
    f0 = np.asarray(func(theta))
    J = np.empty((f0.size, theta.size))
    for k in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[k]))
        e = np.zeros_like(theta)
        e[k] = h
        if stencil == 3:
            J[:, k] = (func(theta + e) - func(theta - e)) / (2 * h)
        elif stencil == 5:
            J[:, k] = (-func(theta + 2 * e) + 8 * func(theta + e) - 8 * func(theta - e) + func(theta - 2 * e)) / (12 * h)
        else:
            raise ValueError("stencil must be 3 or 5")
    return J


def _weights(spec: EstimatorSpec, leverage: LeverageWeights | None, n: int) -> np.ndarray:
    if spec.kind is EstimatorKind.M or leverage is None:
        return np.ones(n)
    return np.asarray(leverage.weights, dtype=float)


def sandwich_covariance(data: RegressionData, fit: FitResult, spec: EstimatorSpec, stencil: int = 3) -> CovarianceReport:
    """``V = M^{-1} Q M^{-T}`` from per-observation estimating functions.

    Standard errors are ``sqrt(diag(V) / n)``.
    """
    params = fit.params
    g, p = params.g, params.p
    d = g * p + g - 1
    if data.n <= d:
        raise InvalidDimensionsError(f"need n > {d} observations for the sandwich estimate")
    w = _weights(spec, fit.leverage, data.n)
    theta = pack_theta(params)

    def mean_h(th):
        return estimating_functions(data.design, data.response, th, params.scales, spec, w).mean(axis=0)

    H = estimating_functions(data.design, data.response, theta, params.scales, spec, w)
    Q = H.T @ H / data.n
    M = jacobian(mean_h, theta, stencil=stencil)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NonIdentifiableError(f"Jacobian of the estimating equations is singular (condition {cond:.3g})")
    Minv_Q = np.linalg.solve(M, Q)
    V = np.linalg.solve(M, Minv_Q.T).T
    V = 0.5 * (V + V.T)
    se = np.sqrt(np.maximum(np.diag(V), 0.0) / data.n)
    if g > 1:
        Vpi = V[g * p:, g * p:]
        last = float(np.sqrt(max(Vpi.sum(), 0.0) / data.n))
    else:
        last = 0.0
    return CovarianceReport(M, Q, V, se, parameter_names(g, p), data.n, last)
