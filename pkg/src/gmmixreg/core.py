"""Mixture-of-regressions fitting with M and GM (Mallows / Schweppe) estimators.

The EM-type loop alternates

1. posteriors ``z`` of the Gaussian mixture at the current parameters,
2. mixing proportions as column means of ``z``,
3. coefficients by weighted least squares with weights ``z * W * w(x)``,
   where ``W`` is the residual weight of the robust kernel and ``w(x)`` the
   leverage weight (identically 1 for plain M-estimation),
4. squared scales by the multiplicative M-scale fixed-point step.

The per-step functions below are the readable reference; :func:`fit_from`
runs the same arithmetic through the compiled kernel in
:mod:`gmmixreg._kernels`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import ComponentCollapseError, DomainError, FitFailedError, InvalidDimensionsError
from .psi import PsiKernel, scale_constant_a
from .scatter import LeverageWeights, robust_leverage


class EstimatorKind(enum.Enum):
    M = "m"
    GM_MALLOWS = "gm-mallows"
    GM_SCHWEPPE = "gm-schweppe"

    @property
    def code(self) -> int:
        return {EstimatorKind.M: _kernels.KIND_M,
                EstimatorKind.GM_MALLOWS: _kernels.KIND_MALLOWS,
                EstimatorKind.GM_SCHWEPPE: _kernels.KIND_SCHWEPPE}[self]


@dataclass(frozen=True)
class EstimatorSpec:
    kind: EstimatorKind
    kernel: PsiKernel
    gamma: float = 0.05

    def __post_init__(self):
        if not isinstance(self.kind, EstimatorKind):
            object.__setattr__(self, "kind", EstimatorKind(self.kind))
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def uses_leverage(self) -> bool:
        return self.kind is not EstimatorKind.M

    def describe(self) -> dict:
        return {"kind": self.kind.value, "psi": self.kernel.family.value, "tuning": self.kernel.c, "gamma": self.gamma}


@dataclass(frozen=True)
class RegressionData:
    """Design matrix (leading column of ones) and response."""

    design: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.design, dtype=float))
        y = np.ascontiguousarray(np.asarray(self.response, dtype=float).ravel())
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise InvalidDimensionsError(f"design {X.shape} does not match response of length {y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("data contain non-finite values")
        if not np.all(X[:, 0] == 1.0):
            raise InvalidDimensionsError("first design column must be the intercept (all ones)")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)

    @classmethod
    def from_predictors(cls, x, y) -> "RegressionData":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return cls(np.column_stack([np.ones(x.shape[0]), x]), y)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    @property
    def predictors(self) -> np.ndarray:
        return np.ascontiguousarray(self.design[:, 1:])


@dataclass(frozen=True)
class MixtureParams:
    mixing: np.ndarray
    coefficients: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.mixing, dtype=float).ravel()
        B = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        s = np.asarray(self.scales, dtype=float).ravel()
        if not (pi.size == B.shape[0] == s.size):
            raise InvalidDimensionsError("mixing, coefficients and scales disagree on g")
        if np.any(pi < 0) or np.any(pi > 1) or abs(pi.sum() - 1.0) > 1e-12:
            raise DomainError(f"mixing proportions must lie in [0, 1] and sum to 1, got {pi}")
        if np.any(~(s > 0)):
            raise DomainError("scales must be positive")
        object.__setattr__(self, "mixing", np.ascontiguousarray(pi))
        object.__setattr__(self, "coefficients", np.ascontiguousarray(B))
        object.__setattr__(self, "scales", np.ascontiguousarray(s))

    @property
    def g(self) -> int:
        return self.mixing.size

    @property
    def p(self) -> int:
        return self.coefficients.shape[1]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.mixing, self.coefficients.ravel(), self.scales])

    @classmethod
    def unflatten(cls, vec, g: int, p: int) -> "MixtureParams":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:g], vec[g:g + g * p].reshape(g, p), vec[g + g * p:])

    def permuted(self, perm) -> "MixtureParams":
        perm = list(perm)
        return MixtureParams(self.mixing[perm], self.coefficients[perm], self.scales[perm])


@dataclass(frozen=True)
class FitConfig:
    tolerance: float = 1e-6
    max_iterations: int = 1000
    n_starts: int = 10
    seed: int = 0
    sigma_floor: float | None = None  # None: 1e-4 * sd(response)
    keep_history: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")
        if self.max_iterations < 1 or self.n_starts < 1:
            raise DomainError("max_iterations and n_starts must be >= 1")
        if self.sigma_floor is not None and not self.sigma_floor > 0:
            raise DomainError("sigma_floor must be positive")

    def floor_for(self, data: RegressionData) -> float:
        if self.sigma_floor is not None:
            return float(self.sigma_floor)
        sd = float(np.std(data.response))
        return 1e-4 * sd if sd > 0 else 1e-4


@dataclass
class FitResult:
    params: MixtureParams
    posteriors: np.ndarray
    complete_loglik: float
    gaussian_loglik: float
    icl: float
    iterations: int
    converged: bool
    leverage: LeverageWeights | None
    start_index: int = 0
    start_failures: dict[int, str] = field(default_factory=dict)
    history: np.ndarray | None = None


def empty_threshold(n: int) -> float:
    return 1e-8 * n


def n_free_params(g: int, p: int) -> int:
    return (g - 1) + g * p + g


# -- single steps ------------------------------------------------------------

def e_step(data: RegressionData, params: MixtureParams) -> np.ndarray:
    Z, _ = _kernels.e_step(data.design, data.response, params.coefficients, params.scales, params.mixing)
    return Z


def gaussian_loglik(data: RegressionData, params: MixtureParams) -> float:
    """Observed-data log-likelihood of the normal mixture of regressions."""
    _, ll = _kernels.e_step(data.design, data.response, params.coefficients, params.scales, params.mixing)
    return float(ll)


def standardized_residuals(data: RegressionData, params: MixtureParams) -> np.ndarray:
    return (data.response[:, None] - data.design @ params.coefficients.T) / params.scales


def _leverage_array(spec: EstimatorSpec, leverage: LeverageWeights | None, n: int) -> np.ndarray:
    if not spec.uses_leverage or leverage is None:
        return np.ones(n)
    return np.ascontiguousarray(leverage.weights, dtype=float)


def robustified_posteriors(posteriors, data: RegressionData, params: MixtureParams,
                           spec: EstimatorSpec, leverage: LeverageWeights | None = None) -> np.ndarray:
    """Posteriors multiplied by the residual weight of the chosen estimator.

    Mallows/M: ``z * psi(t)/t``.  Schweppe: ``z * psi(t/w)/t``, whose ``t -> 0``
    limit is ``z / w``.
    """
    Z = np.asarray(posteriors, dtype=float)
    T = standardized_residuals(data, params)
    w = _leverage_array(spec, leverage, data.n)[:, None]
    k = spec.kernel
    if spec.kind is EstimatorKind.GM_SCHWEPPE:
        return Z * k.weight(T / w) / w
    return Z * k.weight(T)


def update_mixing(posteriors) -> np.ndarray:
    return np.asarray(posteriors, dtype=float).mean(axis=0)


def update_coefficients(data: RegressionData, zstar, leverage: LeverageWeights | None, component: int) -> np.ndarray:
    """Solve ``sum z* w x x' beta = sum z* w x y`` for one component."""
    wt = np.asarray(zstar, dtype=float)[:, component]
    if leverage is not None:
        wt = wt * leverage.weights
    beta, ok = _kernels.solve_weighted(data.design, data.response, np.ascontiguousarray(wt))
    if not ok:
        raise ComponentCollapseError(component, "weighted Gram matrix is singular or ill-conditioned")
    return beta


def update_scale(data: RegressionData, posteriors, params: MixtureParams, kernel: PsiKernel,
                 component: int, sigma_floor: float) -> float:
    """One multiplicative M-scale step for the squared scale of ``component``."""
    z = np.asarray(posteriors, dtype=float)[:, component]
    mass = z.sum()
    if not mass > empty_threshold(data.n):
        raise ComponentCollapseError(component, "no posterior mass")
    a = scale_constant_a(kernel, data.n, data.p)
    s = params.scales[component]
    t = (data.response - data.design @ params.coefficients[component]) / s
    value = s * s / (a * mass) * float(np.sum(z * kernel.chi(t)))
    return max(value, sigma_floor * sigma_floor)


def complete_loglik(data: RegressionData, params: MixtureParams, posteriors) -> float:
    """Gaussian complete-data log-likelihood with soft memberships."""
    Z = np.asarray(posteriors, dtype=float)
    R = data.response[:, None] - data.design @ params.coefficients.T
    s2 = params.scales ** 2
    with np.errstate(divide="ignore"):
        logpi = np.log(params.mixing)
    terms = logpi - 0.5 * math.log(2 * math.pi) - 0.5 * np.log(s2) - R * R / (2 * s2)
    return float(np.sum(np.where(Z > 0, Z * terms, 0.0)))


def icl(complete_loglik: float, d: int, n: int) -> float:
    """Integrated complete likelihood, ``-2 l_c + d log n`` (lower is better)."""
    if n < 2 or d < 1:
        raise InvalidDimensionsError("ICL needs n >= 2 and d >= 1")
    return -2.0 * complete_loglik + d * math.log(n)


# -- initialisation and fitting ----------------------------------------------

def initial_params(data: RegressionData, g: int, rng: np.random.Generator, sigma_floor: float) -> MixtureParams:
    """Random hard partition, per-group least squares."""
    labels = rng.integers(0, g, size=data.n)
    B = np.empty((g, data.p))
    s = np.empty(g)
    counts = np.bincount(labels, minlength=g)
    for i in range(g):
        rows = labels == i
        if counts[i] < data.p:
            raise ComponentCollapseError(i, f"initial group has {counts[i]} < p observations")
        Xi, yi = data.design[rows], data.response[rows]
        beta, _, rank, _ = np.linalg.lstsq(Xi, yi, rcond=None)
        if rank < data.p:
            raise ComponentCollapseError(i, "initial group design is rank deficient")
        B[i] = beta
        s[i] = max(float(np.std(yi - Xi @ beta)), sigma_floor)
    return MixtureParams(counts / data.n, B, s)


def design_leverage(data: RegressionData, spec: EstimatorSpec, seed: int = 0) -> LeverageWeights | None:
    """Leverage weights from the non-constant predictors (``None`` for M)."""
    if not spec.uses_leverage:
        return None
    if data.p == 1:
        return LeverageWeights.ones(data.n, spec.gamma)
    return robust_leverage(data.predictors, gamma=spec.gamma, seed=seed)


def fit_from(data: RegressionData, init: MixtureParams, spec: EstimatorSpec, config: FitConfig = FitConfig(),
             leverage: LeverageWeights | None = None) -> FitResult:
    """Run the EM iterations from ``init``; raises ComponentCollapseError on failure."""
    if init.p != data.p:
        raise InvalidDimensionsError("initial coefficients do not match the design")
    floor = config.floor_for(data)
    a = scale_constant_a(spec.kernel, data.n, data.p)
    lev = _leverage_array(spec, leverage, data.n)
    history = np.zeros((config.max_iterations + 1, init.flatten().size))
    B, s, pi, iters, converged, status, bad = _kernels.em_run(
        data.design, data.response, lev, spec.kind.code, spec.kernel.family.code, spec.kernel.c, a,
        init.coefficients, np.maximum(init.scales, floor), init.mixing,
        float(config.tolerance), int(config.max_iterations), floor, empty_threshold(data.n), history,
    )
    if status == _kernels.EMPTY_COMPONENT:
        raise ComponentCollapseError(int(bad), "no posterior mass")
    if status == _kernels.SINGULAR_GRAM:
        raise ComponentCollapseError(int(bad), "weighted Gram matrix is singular or ill-conditioned")
    # renormalize to absorb summation round-off before validation
    params = MixtureParams(pi / pi.sum(), B, s)
    Z, ll = _kernels.e_step(data.design, data.response, params.coefficients, params.scales, params.mixing)
    lc = complete_loglik(data, params, Z)
    return FitResult(
        params=params,
        posteriors=Z,
        complete_loglik=lc,
        gaussian_loglik=float(ll),
        icl=icl(lc, n_free_params(params.g, data.p), data.n),
        iterations=int(iters),
        converged=bool(converged),
        leverage=leverage if spec.uses_leverage else None,
        history=history[: iters + 1].copy() if config.keep_history else None,
    )


def fit(data: RegressionData, g: int, spec: EstimatorSpec, config: FitConfig = FitConfig(),
        leverage: LeverageWeights | None = None) -> FitResult:
    """Multi-start fit; keeps the start with the highest Gaussian log-likelihood.

    ``leverage`` may be passed to reuse weights computed for the same design;
    otherwise they are derived from ``data.predictors`` once, before any start.
    """
    if g < 1:
        raise InvalidDimensionsError("g must be >= 1")
    if leverage is None:
        leverage = design_leverage(data, spec, seed=config.seed)
    floor = config.floor_for(data)
    best: FitResult | None = None
    failures: dict[int, str] = {}
    for start in range(config.n_starts):
        rng = np.random.default_rng([config.seed, 1, start])
        try:
            init = initial_params(data, g, rng, floor)
            result = fit_from(data, init, spec, config, leverage)
        except ComponentCollapseError as exc:
            failures[start] = str(exc)
            continue
        if not np.isfinite(result.gaussian_loglik):
            failures[start] = "non-finite log-likelihood"
            continue
        result.start_index = start
        if best is None or result.gaussian_loglik > best.gaussian_loglik:
            best = result
    if best is None:
        raise FitFailedError([failures[k] for k in sorted(failures)])
    best.start_failures = failures
    return best


def with_config(config: FitConfig, **changes) -> FitConfig:
    return replace(config, **changes)
