"""Robust location/scatter by FAST-MCD and leverage weights from robust distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _kernels
from .errors import DegenerateScatterError, DomainError, InvalidDimensionsError

N_STARTS = 500
INITIAL_STEPS = 2
N_REFINE = 10
MAX_REFINE_STEPS = 200


@dataclass(frozen=True)
class McdEstimate:
    """Result of :func:`fast_mcd`.

    ``scatter`` is the consistency-corrected covariance of the optimal
    h-subset; ``determinant`` is the (uncorrected) covariance determinant of
    that subset, i.e. the value MCD minimizes.
    """

    location: np.ndarray
    scatter: np.ndarray
    support: np.ndarray
    determinant: float
    raw_scatter: np.ndarray
    correction: float


@dataclass(frozen=True)
class LeverageWeights:
    weights: np.ndarray
    cutoff_b: float
    gamma: float
    distances: np.ndarray | None = None

    @classmethod
    def ones(cls, n: int, gamma: float = 0.05) -> "LeverageWeights":
        return cls(np.ones(n), np.inf, gamma, None)


def _as_predictors(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidDimensionsError("predictor matrix must be 2-d")
    if not np.all(np.isfinite(X)):
        raise DomainError("predictor matrix contains non-finite values")
    return np.ascontiguousarray(X)


def subset_size(n: int, p: int) -> int:
    return (n + p + 1) // 2


def fast_mcd(X, seed: int = 0, n_starts: int = N_STARTS) -> McdEstimate:
    """Minimum covariance determinant estimate of location and scatter.

    One predictor is solved exactly via the minimum-variance contiguous
    half-sample of the sorted data.  Otherwise: ``n_starts`` random elemental
    starts, two C-steps each, then the ten best are concentrated to a fixed
    point.  Ties in determinant go to the lexicographically smallest support.
    """
    X = _as_predictors(X)
    n, p = X.shape
    if n < 2 * (p + 1):
        raise InvalidDimensionsError(f"FAST-MCD needs n >= 2(p+1); got n={n}, p={p}")
    if np.any(np.ptp(X, axis=0) == 0):
        raise DegenerateScatterError("a predictor column is constant")
    h = subset_size(n, p)

    if p == 1:
        support, logdet = _exact_univariate(X[:, 0], h)
    else:
        support, logdet = _fast_mcd_search(X, h, seed, n_starts)
    if not np.isfinite(logdet):
        raise DegenerateScatterError("optimal h-subset has a singular covariance matrix")

    location, raw = _kernels.subset_moments(X, support)
    d2 = _kernels.squared_distances(X, location, raw)
    correction = float(np.median(d2) / stats.chi2.ppf(0.5, p))
    if not correction > 0:
        raise DegenerateScatterError("consistency correction factor is zero")
    return McdEstimate(
        location=location,
        scatter=raw * correction,
        support=support,
        determinant=float(np.exp(logdet)),
        raw_scatter=raw,
        correction=correction,
    )


def _exact_univariate(x: np.ndarray, h: int) -> tuple[np.ndarray, float]:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    s1 = np.concatenate(([0.0], np.cumsum(xs)))
    s2 = np.concatenate(([0.0], np.cumsum(xs * xs)))
    n_windows = x.size - h + 1
    sums = s1[h:] - s1[:n_windows]
    var = (s2[h:] - s2[:n_windows]) / h - (sums / h) ** 2
    # cumulative sums lose a little precision; recompute close candidates exactly
    cands = np.flatnonzero(var <= var.min() + 1e-9 * max(1.0, abs(var.min())))
    best = None
    for k in cands:
        window = xs[k:k + h]
        v = float(np.mean((window - window.mean()) ** 2))
        support = np.sort(order[k:k + h])
        key = (v, tuple(support))
        if best is None or key < best[0]:
            best = (key, support, v)
    _, support, v = best
    logdet = float(np.log(v)) if v > 0 else -np.inf
    return support.astype(np.int64), logdet


def _fast_mcd_search(X: np.ndarray, h: int, seed: int, n_starts: int) -> tuple[np.ndarray, float]:
    n, p = X.shape
    rng = np.random.default_rng([seed, 0x4D4344])
    width = min(n, 2 * p + 22)
    starts = np.empty((n_starts, width), dtype=np.int64)
    for k in range(n_starts):
        starts[k] = rng.permutation(n)[:width]
    supports, logdets = _kernels.mcd_starts(X, starts, h, INITIAL_STEPS)

    candidates = _rank(supports, logdets)[:N_REFINE]
    if not candidates:
        raise DegenerateScatterError("no random start produced a non-singular subset")
    refined = []
    for support in candidates:
        s, ld = _kernels.concentrate(X, support, h, MAX_REFINE_STEPS)
        refined.append((ld, tuple(s.tolist())))
    ld, best = min(refined)
    return np.asarray(best, dtype=np.int64), ld


def _rank(supports: np.ndarray, logdets: np.ndarray) -> list[np.ndarray]:
    seen = {}
    for s, ld in zip(supports, logdets):
        if ld == np.inf:
            continue
        key = tuple(s.tolist())
        seen[key] = ld
    ordered = sorted(seen.items(), key=lambda kv: (kv[1], kv[0]))
    return [np.asarray(k, dtype=np.int64) for k, _ in ordered]


def mahalanobis_distances(X, est: McdEstimate) -> np.ndarray:
    """Squared robust distances ``(x - m)' C^{-1} (x - m)``."""
    X = _as_predictors(X)
    C = np.atleast_2d(np.asarray(est.scatter, dtype=float))
    try:
        cond = np.linalg.cond(C)
    except np.linalg.LinAlgError as exc:
        raise DegenerateScatterError(str(exc)) from exc
    if not np.isfinite(cond) or cond > 1e14:
        raise DegenerateScatterError("scatter matrix is not invertible")
    m = np.ascontiguousarray(np.atleast_1d(est.location), dtype=float)
    d2 = _kernels.squared_distances(X, m, np.ascontiguousarray(C))
    return np.maximum(d2, 0.0)


def chi2_cutoff(gamma: float, df: int) -> float:
    return float(stats.chi2.ppf(1.0 - gamma, df))


def leverage_weights(X, est: McdEstimate, gamma: float = 0.05) -> LeverageWeights:
    """Weights ``min(1, sqrt(b / d))`` with ``b`` the (1 - gamma) chi-square quantile."""
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    d2 = mahalanobis_distances(X, est)
    b = chi2_cutoff(gamma, np.atleast_2d(est.scatter).shape[0])
    return LeverageWeights(weights_from_distances(d2, b), b, gamma, d2)


def weights_from_distances(d2: np.ndarray, b: float) -> np.ndarray:
    d2 = np.asarray(d2, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        w = np.sqrt(b / d2)
    return np.where(d2 <= b, 1.0, np.minimum(1.0, w))


def robust_leverage(X, gamma: float = 0.05, seed: int = 0) -> LeverageWeights:
    """MCD fit plus leverage weights in one call."""
    est = fast_mcd(X, seed=seed)
    return leverage_weights(X, est, gamma)
