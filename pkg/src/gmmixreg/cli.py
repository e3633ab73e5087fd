"""Command-line interface: ``gmmixreg fit | simulate | export-fit``.

Exit codes: 0 success, 2 input error, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import EstimatorKind, EstimatorSpec, FitConfig, RegressionData, fit, n_free_params
from .errors import FitFailedError, MixregError, NonIdentifiableError
from .inference import sandwich_covariance
from .psi import PsiKernel
from .simulation import ReplicationPlan, ScenarioSpec, format_table, run_plan, select_estimators, summary_to_csv

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATION = 3

REPORT_FORMAT = "gmmixreg.fit-report/1"


class InputError(Exception):
    pass


# -- serialization -----------------------------------------------------------

def _num(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    text = format(x, ".17g")
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written at 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return json.dumps(obj)


# -- input -------------------------------------------------------------------

def read_table(path: str) -> tuple[list[str], dict[str, np.ndarray], bytes]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"data file not found: {path}")
    raw = p.read_bytes()
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not valid UTF-8 ({exc})") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise InputError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise InputError(f"{path}: no data rows")
    columns: dict[str, list] = {h: [] for h in header}
    for lineno, r in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in r):
            continue
        if len(r) != len(header):
            raise InputError(f"{path}: line {lineno} has {len(r)} fields, expected {len(header)}")
        for h, cell in zip(header, r):
            columns[h].append((lineno, cell.strip()))
    return header, columns, raw


def numeric_column(columns, name: str, path: str) -> np.ndarray:
    if name not in columns:
        raise InputError(f"{path}: column {name!r} not found (available: {', '.join(columns)})")
    out = []
    for lineno, cell in columns[name]:
        try:
            v = float(cell)
        except ValueError:
            raise InputError(f"{path}: line {lineno}, column {name!r}: cannot parse {cell!r} as a number") from None
        if not math.isfinite(v):
            raise InputError(f"{path}: line {lineno}, column {name!r}: non-finite value {cell!r}")
        out.append(v)
    return np.asarray(out)


# -- fit ---------------------------------------------------------------------

def build_spec(args) -> EstimatorSpec:
    kernel = PsiKernel.default(args.psi) if args.tuning is None else PsiKernel(args.psi, args.tuning)
    return EstimatorSpec(EstimatorKind(args.estimator), kernel, args.gamma)


def fit_report(args) -> tuple[dict, list[str]]:
    header, columns, raw = read_table(args.data)
    predictors = [s.strip() for s in args.predictors.split(",") if s.strip()]
    if not predictors:
        raise InputError("--predictors must name at least one column")
    if args.response in predictors:
        raise InputError("response column is also listed as a predictor")
    y = numeric_column(columns, args.response, args.data)
    X = np.column_stack([numeric_column(columns, c, args.data) for c in predictors])
    try:
        spec = build_spec(args)
        config = FitConfig(tolerance=args.tol, max_iterations=args.max_iter, n_starts=args.starts, seed=args.seed)
        data = RegressionData.from_predictors(X, y)
    except MixregError as exc:
        raise InputError(str(exc)) from exc
    if args.components < 1:
        raise InputError("--components must be >= 1")

    result = fit(data, args.components, spec, config)
    warnings = []
    g, p = result.params.g, data.p
    se: dict[str, float | None] = {}
    se_available = True
    try:
        cov = sandwich_covariance(data, result, spec)
        se.update(cov.as_dict())
        if g > 1:
            se[f"pi_{g}"] = cov.last_mixing_se
    except (NonIdentifiableError, MixregError, np.linalg.LinAlgError) as exc:
        se_available = False
        warnings.append(f"standard errors unavailable: {exc}")

    names = ["(Intercept)"] + predictors
    params = result.params
    lines = [{"component": i + 1, "intercept": params.coefficients[i, 0],
              "coefficients": dict(zip(predictors, params.coefficients[i, 1:].tolist()))} for i in range(g)]
    estimates = {f"pi_{i + 1}": params.mixing[i] for i in range(g)}
    for i in range(g):
        for k in range(p):
            estimates[f"beta_{i + 1}_{k}"] = params.coefficients[i, k]
    for i in range(g):
        estimates[f"sigma_{i + 1}"] = params.scales[i]

    report = {
        "format": REPORT_FORMAT,
        "version": __version__,
        "seed": args.seed,
        "config": {"components": g, "tolerance": args.tol, "max_iterations": args.max_iter, "starts": args.starts},
        "estimator": spec.describe(),
        "input": {
            "file": Path(args.data).name,
            "rows": data.n,
            "columns": header,
            "response": args.response,
            "predictors": predictors,
            "sha256": hashlib.sha256(raw).hexdigest(),
        },
        "coefficient_names": names,
        "params": {"mixing": params.mixing, "coefficients": params.coefficients, "scales": params.scales},
        "estimates": estimates,
        "standard_errors": {"available": se_available,
                            "values": {k: se.get(k) for k in estimates if not k.startswith("sigma")} if se_available else None},
        "fitted_lines": lines,
        "complete_loglik": result.complete_loglik,
        "gaussian_loglik": result.gaussian_loglik,
        "n_free_params": n_free_params(g, p),
        "icl": result.icl,
        "iterations": result.iterations,
        "converged": result.converged,
        "start_index": result.start_index,
        "failed_starts": len(result.start_failures),
        "leverage": None if result.leverage is None else {
            "gamma": result.leverage.gamma, "cutoff_b": result.leverage.cutoff_b, "weights": result.leverage.weights},
        "posteriors": result.posteriors,
    }
    return report, warnings


def report_as_table(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"# seed={report['seed']} estimator={report['estimator']['kind']} psi={report['estimator']['psi']} "
                f"tuning={_num(report['estimator']['tuning'])} components={report['config']['components']}"])
    w.writerow(["parameter", "estimate", "std_error"])
    se = report["standard_errors"]["values"] or {}
    for name, value in report["estimates"].items():
        s = se.get(name)
        w.writerow([name, _num(value), "" if s is None else _num(s)])
    w.writerow(["complete_loglik", _num(report["complete_loglik"]), ""])
    w.writerow(["icl", _num(report["icl"]), ""])
    return buf.getvalue()


def _write(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_fit(args) -> int:
    try:
        report, warnings = fit_report(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FitFailedError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except MixregError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    for msg in warnings:
        print(f"warning: {msg}", file=sys.stderr)
    text = dumps(report) + "\n" if args.format == "json" else report_as_table(report)
    _write(text, args.output)
    return EXIT_OK


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        spec = ScenarioSpec(args.scenario, args.case, args.n, seed=args.seed, n_outliers=args.outliers,
                            leverage_x=args.leverage_x, outlier_y=args.outlier_y)
        estimators = select_estimators(args.estimators)
        plan = ReplicationPlan(spec, args.N, estimators, FitConfig(n_starts=args.starts, tolerance=args.tol,
                                                                   max_iterations=args.max_iter))
    except MixregError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    def progress(done: int, total: int) -> None:
        print(f"replication {done}/{total}", file=sys.stderr, flush=True)

    try:
        summary = run_plan(plan, progress=None if args.quiet else progress)
    except MixregError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION

    meta = (f"# scenario={spec.scenario} case={spec.case} n={spec.n} N={plan.replications} seed={spec.seed} "
            f"starts={args.starts} outliers={spec.outliers} leverage_x={_num(spec.leverage_x)} "
            f"outlier_y={_num(spec.outlier_y)}\n")
    _write(meta + format_table(summary), args.output)
    if args.csv:
        Path(args.csv).write_text(meta + summary_to_csv(summary), encoding="utf-8")
    return EXIT_OK


# -- export-fit --------------------------------------------------------------

def export_rows(report: dict) -> str:
    try:
        if report.get("format") != REPORT_FORMAT:
            raise KeyError("format")
        predictors = list(report["input"]["predictors"])
        lines = report["fitted_lines"]
        Z = np.asarray(report["posteriors"], dtype=float)
        if Z.ndim != 2 or Z.shape[1] != len(lines):
            raise ValueError("posterior matrix does not match the number of components")
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed fit report ({exc})") from exc
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record", "component", "observation", "map_component", "posterior_max", "intercept"] + predictors)
    for line in lines:
        coefs = [_num(line["coefficients"][name]) for name in predictors]
        w.writerow(["line", line["component"], "", "", "", _num(line["intercept"])] + coefs)
    labels = Z.argmax(axis=1)
    for j, (lab, row) in enumerate(zip(labels, Z)):
        w.writerow(["assignment", "", j + 1, int(lab) + 1, _num(row[lab]), ""] + [""] * len(predictors))
    return buf.getvalue()


def cmd_export_fit(args) -> int:
    try:
        path = Path(args.report)
        if not path.is_file():
            raise InputError(f"report not found: {args.report}")
        try:
            report = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise InputError(f"malformed fit report ({exc})") from exc
        if not isinstance(report, dict):
            raise InputError("malformed fit report (top level is not an object)")
        text = export_rows(report)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _write(text, args.output)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmmixreg", description="Robust mixture-of-regressions fitting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a mixture of regressions to a CSV file")
    f.add_argument("--data", required=True)
    f.add_argument("--response", required=True)
    f.add_argument("--predictors", required=True, help="comma-separated column names")
    f.add_argument("--components", type=int, default=2)
    f.add_argument("--estimator", choices=[k.value for k in EstimatorKind], default="gm-mallows")
    f.add_argument("--psi", choices=["huber", "tukey"], default="huber")
    f.add_argument("--tuning", type=float, default=None, help="default: 1.345 (huber), 4.685 (tukey)")
    f.add_argument("--gamma", type=float, default=0.05)
    f.add_argument("--tol", type=float, default=1e-6)
    f.add_argument("--max-iter", type=int, default=1000)
    f.add_argument("--starts", type=int, default=20)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--output")
    f.add_argument("--format", choices=["json", "csv-table"], default="json")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a Monte Carlo bias/MSE study")
    s.add_argument("--scenario", type=int, choices=[1, 2], required=True)
    s.add_argument("--case", choices=["I", "II", "III", "IV"], required=True)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--N", type=int, default=500, help="number of replications")
    s.add_argument("--estimators", default="all", help="'all' or a comma list of m-huber,m-tukey,gm-mallows,gm-schweppe")
    s.add_argument("--starts", type=int, default=5)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--outliers", type=int, default=None, help="case IV leverage points (default n/40)")
    s.add_argument("--leverage-x", type=float, default=20.0)
    s.add_argument("--outlier-y", type=float, default=20.0)
    s.add_argument("--output", help="table file (default: stdout)")
    s.add_argument("--csv", help="also write the summary as CSV")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("export-fit", help="export fitted lines and MAP assignments from a JSON fit report")
    e.add_argument("--report", required=True)
    e.add_argument("--output")
    e.set_defaults(func=cmd_export_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
