"""Monte Carlo harness: two-component designs, error cases I-IV, bias/MSE tables."""

from __future__ import annotations

import csv
import io
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (EstimatorKind, EstimatorSpec, FitConfig, MixtureParams, RegressionData, design_leverage, fit)
from .errors import InvalidDimensionsError, MixregError, PlanFailedError
from .psi import PsiKernel

CASES = ("I", "II", "III", "IV")

# substream tags; data generation never shares a stream with fitting
_DATA = 0
_FIT = 1


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int
    case: str
    n: int
    seed: int = 0
    n_outliers: int | None = None
    leverage_x: float = 20.0
    outlier_y: float = 20.0

    def __post_init__(self):
        if self.scenario not in (1, 2):
            raise InvalidDimensionsError(f"scenario must be 1 or 2, got {self.scenario}")
        if self.case not in CASES:
            raise InvalidDimensionsError(f"case must be one of {CASES}, got {self.case!r}")
        if self.n < 10:
            raise InvalidDimensionsError("n must be at least 10")
        if self.outliers > self.n // 2:
            raise InvalidDimensionsError("too many outliers for n")

    @property
    def outliers(self) -> int:
        if self.case != "IV":
            return 0
        if self.n_outliers is not None:
            return self.n_outliers
        return max(1, round(self.n / 40))  # 5 for n=200, 10 for n=400

    @property
    def truth(self) -> MixtureParams:
        return true_params(self.scenario)

    @property
    def t_df(self) -> int:
        return 4 if self.scenario == 1 else 3


def true_params(scenario: int) -> MixtureParams:
    if scenario == 1:
        return MixtureParams([0.5, 0.5], [[0.0, 4.0], [0.0, -4.0]], [1.0, 1.0])
    return MixtureParams([0.25, 0.75], [[0.0, 1.0, 1.0], [0.0, -1.0, -1.0]], [1.0, 1.0])


def generate(spec: ScenarioSpec, replication: int) -> tuple[RegressionData, np.ndarray]:
    """Draw one data set; labels are 1-based, 0 marks an injected leverage point."""
    rng = np.random.default_rng([spec.seed, replication, _DATA])
    truth = spec.truth
    n, p = spec.n, truth.p
    labels = np.where(rng.random(n) < truth.mixing[0], 1, 2)
    x = rng.standard_normal((n, p - 1))
    if spec.case == "II":
        err = rng.standard_t(spec.t_df, size=n)
    elif spec.case == "III":
        err = np.where(rng.random(n) < 0.05, 5.0, 1.0) * rng.standard_normal(n)
    else:
        err = rng.standard_normal(n)
    X = np.column_stack([np.ones(n), x])
    y = np.einsum("ij,ij->i", X, truth.coefficients[labels - 1]) + err
    k = spec.outliers
    if k:
        X[n - k:, 1:] = spec.leverage_x
        y[n - k:] = spec.outlier_y
        labels[n - k:] = 0
    return RegressionData(X, y), labels


def align_labels(estimated: MixtureParams, truth: MixtureParams) -> MixtureParams:
    """Relabel components to minimize the summed squared coefficient distance.

    Permutations are scanned in lexicographic order and only a strictly better
    cost replaces the incumbent, so ties go to the lowest-index permutation.
    """
    if estimated.g != truth.g:
        raise InvalidDimensionsError("component counts differ")
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(truth.g)):
        cost = float(np.sum((estimated.coefficients[list(perm)] - truth.coefficients) ** 2))
        if cost < best_cost:
            best, best_cost = perm, cost
    return estimated.permuted(best)


def standard_estimators() -> dict[str, EstimatorSpec]:
    return {
        "Mixreg-Huber": EstimatorSpec(EstimatorKind.M, PsiKernel.huber()),
        "Mixreg-Tukey": EstimatorSpec(EstimatorKind.M, PsiKernel.tukey()),
        "MixregGM-Mallows": EstimatorSpec(EstimatorKind.GM_MALLOWS, PsiKernel.huber()),
        "MixregGM-Schweppe": EstimatorSpec(EstimatorKind.GM_SCHWEPPE, PsiKernel.huber()),
    }


ESTIMATOR_ALIASES = {
    "m-huber": "Mixreg-Huber",
    "m-tukey": "Mixreg-Tukey",
    "gm-mallows": "MixregGM-Mallows",
    "gm-schweppe": "MixregGM-Schweppe",
}


def parameter_labels(p: int) -> list[tuple[str, int, int | None]]:
    """(label, component, coefficient) in table order; coefficient None means pi_1."""
    rows = [(f"beta{i}{k}", i, k) for k in range(p) for i in (1, 2)]
    rows.append(("pi1", 1, None))
    return rows


def parameter_vector(params: MixtureParams) -> np.ndarray:
    out = [params.coefficients[i - 1, k] if k is not None else params.mixing[0]
           for _, i, k in parameter_labels(params.p)]
    return np.asarray(out)


@dataclass(frozen=True)
class ReplicationPlan:
    spec: ScenarioSpec
    replications: int
    estimators: dict[str, EstimatorSpec] = field(default_factory=standard_estimators)
    fit_config: FitConfig = FitConfig(n_starts=5)

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidDimensionsError("need at least one replication")
        if not self.estimators:
            raise InvalidDimensionsError("no estimators given")


@dataclass
class ReplicationSummary:
    estimators: list[str]
    parameters: list[str]
    truth: np.ndarray
    bias: np.ndarray  # (estimators, parameters)
    mse: np.ndarray
    n_failed: np.ndarray
    estimates: np.ndarray | None = None  # (replications, estimators, parameters), NaN when failed

    def cell(self, estimator: str, parameter: str) -> tuple[float, float]:
        e, q = self.estimators.index(estimator), self.parameters.index(parameter)
        return float(self.mse[e, q]), float(self.bias[e, q])


def bias_mse(estimates: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise bias and MSE over rows, ignoring NaN rows."""
    ok = ~np.isnan(estimates).any(axis=1)
    est = estimates[ok]
    return est.mean(axis=0) - truth, np.mean((est - truth) ** 2, axis=0)


def _replicate(plan: ReplicationPlan, r: int) -> np.ndarray:
    data, _ = generate(plan.spec, r)
    truth = plan.spec.truth
    cfg = FitConfig(
        tolerance=plan.fit_config.tolerance,
        max_iterations=plan.fit_config.max_iterations,
        n_starts=plan.fit_config.n_starts,
        seed=int(np.random.default_rng([plan.spec.seed, r, _FIT]).integers(2**31)),
        sigma_floor=plan.fit_config.sigma_floor,
    )
    out = np.full((len(plan.estimators), truth.g * truth.p + 1), np.nan)
    leverage = {}
    for e, spec in enumerate(plan.estimators.values()):
        try:
            key = spec.gamma if spec.uses_leverage else None
            if key not in leverage:
                leverage[key] = design_leverage(data, spec, seed=cfg.seed)
            result = fit(data, truth.g, spec, cfg, leverage=leverage[key])
        except MixregError:
            continue
        out[e] = parameter_vector(align_labels(result.params, truth))
    return out


def _replicate_chunk(args) -> list[np.ndarray]:
    plan, indices = args
    return [_replicate(plan, r) for r in indices]


def worker_count() -> int:
    env = os.environ.get("MIXREG_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_plan(plan: ReplicationPlan, progress: Callable[[int, int], None] | None = None,
             workers: int | None = None) -> ReplicationSummary:
    """Replicate, fit every estimator, and aggregate bias/MSE.

    Results are reduced in replication order, so the summary does not depend
    on the number of workers.
    """
    N = plan.replications
    workers = worker_count() if workers is None else max(1, workers)
    results: list[np.ndarray] = []
    if workers == 1:
        for r in range(N):
            results.append(_replicate(plan, r))
            if progress:
                progress(r + 1, N)
    else:
        size = max(1, N // (4 * workers))
        chunks = [list(range(s, min(N, s + size))) for s in range(0, N, size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk_out in pool.map(_replicate_chunk, [(plan, c) for c in chunks]):
                results.extend(chunk_out)
                if progress:
                    progress(len(results), N)
    estimates = np.stack(results)
    return summarize(plan, estimates)


def summarize(plan: ReplicationPlan, estimates: np.ndarray) -> ReplicationSummary:
    truth_params = plan.spec.truth
    truth = parameter_vector(truth_params)
    names = list(plan.estimators)
    E, P = len(names), truth.size
    bias = np.zeros((E, P))
    mse = np.zeros((E, P))
    failed = np.zeros(E, dtype=int)
    for e, name in enumerate(names):
        block = estimates[:, e, :]
        failed[e] = int(np.isnan(block).any(axis=1).sum())
        if failed[e] == block.shape[0]:
            raise PlanFailedError(name)
        bias[e], mse[e] = bias_mse(block, truth)
    labels = [lab for lab, _, _ in parameter_labels(truth_params.p)]
    return ReplicationSummary(names, labels, truth, bias, mse, failed, estimates)


def _fmt_true(v: float) -> str:
    return f"{v:g}"


def format_cell(mse: float, bias: float) -> str:
    return f"{mse:.4f} ({bias:.4f})"


def format_table(summary: ReplicationSummary) -> str:
    """Plain-text table: one row per parameter, ``MSE (bias)`` per estimator."""
    head = ["parameter"] + summary.estimators
    rows = [head]
    for q, name in enumerate(summary.parameters):
        row = [f"{name}: {_fmt_true(summary.truth[q])}"]
        row += [format_cell(summary.mse[e, q], summary.bias[e, q]) for e in range(len(summary.estimators))]
        rows.append(row)
    if summary.n_failed.any():
        rows.append(["failed fits"] + [str(k) for k in summary.n_failed])
    widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
    lines = ["  ".join(cell.ljust(widths[c]) for c, cell in enumerate(r)).rstrip() for r in rows]
    lines.append("Note: value in parentheses is the bias")
    return "\n".join(lines) + "\n"


CSV_FIELDS = ["estimator", "parameter", "true_value", "mse", "bias", "n_failed"]


def summary_to_csv(summary: ReplicationSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for e, est in enumerate(summary.estimators):
        for q, name in enumerate(summary.parameters):
            w.writerow([est, name, repr(float(summary.truth[q])), repr(float(summary.mse[e, q])),
                        repr(float(summary.bias[e, q])), int(summary.n_failed[e])])
    return buf.getvalue()


def summary_from_csv(text: str) -> ReplicationSummary:
    """Inverse of :func:`summary_to_csv`; leading ``#`` metadata lines are skipped."""
    body = [line for line in text.splitlines() if not line.startswith("#")]
    rows = list(csv.DictReader(body))
    estimators = list(dict.fromkeys(r["estimator"] for r in rows))
    parameters = list(dict.fromkeys(r["parameter"] for r in rows))
    E, P = len(estimators), len(parameters)
    bias, mse, truth = np.zeros((E, P)), np.zeros((E, P)), np.zeros(P)
    failed = np.zeros(E, dtype=int)
    for r in rows:
        e, q = estimators.index(r["estimator"]), parameters.index(r["parameter"])
        truth[q] = float(r["true_value"])
        mse[e, q] = float(r["mse"])
        bias[e, q] = float(r["bias"])
        failed[e] = int(r["n_failed"])
    return ReplicationSummary(estimators, parameters, truth, bias, mse, failed)


def select_estimators(names: Sequence[str] | str) -> dict[str, EstimatorSpec]:
    table = standard_estimators()
    if isinstance(names, str):
        names = [s.strip() for s in names.split(",") if s.strip()]
    if list(names) == ["all"]:
        return table
    out = {}
    for name in names:
        full = ESTIMATOR_ALIASES.get(name.lower(), name)
        if full not in table:
            raise InvalidDimensionsError(f"unknown estimator {name!r}")
        out[full] = table[full]
    return out
