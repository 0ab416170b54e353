"""Run diagnostics, rate fits, speedup tables and the CSV record format."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, fields

import numpy as np

from dsmo.errors import InsufficientData, NoExactOracle, NonPositiveValue, SchemaError
from dsmo.problems.base import best_responses, exact_hypergradient


@dataclass
class RunRecord:
    run_id: str
    algo: str
    problem: str
    K: int
    rho: float
    t: int
    samples_total: int
    grad_norm_sq: float
    mse_to_opt: float
    obj_gap: float
    consensus_x: float
    consensus_y: tuple
    wall_ms: float


FIELDS = tuple(f.name for f in fields(RunRecord))
_INT = {"K", "t", "samples_total"}
_STR = {"run_id", "algo", "problem"}
_BIG = 1e300


def consensus_error(X) -> float:
    """``sum_k ||x^k - mean(x)||^2 / K`` for stacked rows ``X`` of shape ``(K, ...)``."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    return float(np.sum((X - X.mean(axis=0)) ** 2) / len(X))


def evaluate(problem, X, Ys, *, run_id, algo, rho, t, samples_total, wall_ms=0.0) -> RunRecord:
    """Build a record at the network average of ``X`` using the problem's exact oracles.

    Quantities without an exact oracle (no best-response solver, unknown optimum)
    are reported as NaN.
    """
    xbar = np.asarray(X, dtype=float).mean(axis=0)
    nan = float("nan")
    grad = mse = gap = nan
    if problem.x_star is not None:
        mse = float(np.sum((xbar - problem.x_star) ** 2))
    try:
        ys = best_responses(problem, xbar)
        grad = float(np.sum(exact_hypergradient(problem, xbar) ** 2))
        if problem.F_star is not None:
            gap = problem.f_value(xbar, ys[-1]) - problem.F_star
    except NoExactOracle:
        pass
    return RunRecord(
        run_id=run_id, algo=algo, problem=problem.tag, K=int(len(X)), rho=float(rho), t=int(t),
        samples_total=int(samples_total), grad_norm_sq=grad, mse_to_opt=mse, obj_gap=float(gap),
        consensus_x=consensus_error(X), consensus_y=tuple(consensus_error(Y) for Y in Ys),
        wall_ms=float(wall_ms),
    )


# -- fits and summaries ------------------------------------------------------

def loglog_slope(records, t_min=None, t_max=None, field="mse_to_opt"):
    """Least-squares slope of ``log(field)`` against ``log(t)`` inside ``[t_min, t_max]``.

    Returns ``(slope, rms_residual)``.  NaN rows are skipped.  Without an explicit
    window the first 10% of the run is treated as transient and dropped.
    """
    recs = list(records)
    if t_min is None:
        t_min = max(1, int(0.1 * max((r.t for r in recs), default=0)))
    if t_max is None:
        t_max = math.inf
    pts = [(r.t, getattr(r, field)) for r in recs if t_min <= r.t <= t_max and r.t > 0]
    pts = [(t, v) for t, v in pts if not math.isnan(v)]
    if len(pts) < 10:
        raise InsufficientData(f"need at least 10 records in the window, got {len(pts)}")
    t, v = np.array(pts, dtype=float).T
    if np.any(v <= 0):
        raise NonPositiveValue(f"{field} must be positive for a log-log fit")
    lt, lv = np.log(t), np.log(v)
    A = np.stack([lt, np.ones_like(lt)], axis=1)
    coef, *_ = np.linalg.lstsq(A, lv, rcond=None)
    resid = lv - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def samples_to_epsilon(records, epsilon, field="mse_to_opt"):
    """``samples_total`` of the first record with ``field <= epsilon``; ``None`` if never reached."""
    for r in records:
        v = getattr(r, field)
        if not math.isnan(v) and v <= epsilon:
            return r.samples_total
    return None


@dataclass(frozen=True)
class SpeedupRow:
    K: int
    reps: int
    reached: int
    median_log10: float
    q125_log10: float
    q875_log10: float


def speedup_table(runs, epsilon, field="mse_to_opt", min_reps=3):
    """Per-K median and 12.5%/87.5% empirical quantiles of ``log10(samples_to_epsilon)``.

    ``runs`` is an iterable of record lists (one per run); runs are grouped by
    their ``K`` column.  Runs that never reach ``epsilon`` count as ``+inf``.
    """
    groups = defaultdict(list)
    for recs in runs:
        recs = list(recs)
        if not recs:
            continue
        s = samples_to_epsilon(recs, epsilon, field)
        groups[recs[0].K].append(math.inf if s is None else math.log10(max(s, 1)))
    if not groups:
        raise InsufficientData("no runs to tabulate")
    rows = []
    for K in sorted(groups):
        vals = np.array(groups[K])
        if len(vals) < min_reps:
            raise InsufficientData(f"K={K}: need at least {min_reps} repetitions, got {len(vals)}")
        # unreached runs sit at +inf; a large finite stand-in keeps interpolation well defined
        q = np.quantile(np.where(np.isfinite(vals), vals, _BIG), [0.5, 0.125, 0.875])
        q = np.where(q >= _BIG / 10, math.inf, q)
        rows.append(SpeedupRow(K, len(vals), int(np.sum(np.isfinite(vals))), *(float(v) for v in q)))
    return rows


# -- CSV ---------------------------------------------------------------------

def _fmt(name, value):
    if name in _STR:
        return str(value)
    if name in _INT:
        return str(int(value))
    if name == "consensus_y":
        return ";".join("%.17g" % v for v in value)
    return "%.17g" % value


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for r in records:
            w.writerow([_fmt(n, getattr(r, n)) for n in FIELDS])


def _parse(name, text):
    if name in _STR:
        return text
    if name in _INT:
        return int(text)
    if name == "consensus_y":
        return tuple(float(v) for v in text.split(";")) if text else ()
    return float(text)


def read_csv(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError("missing header row")
    header = rows[0]
    for i, expected in enumerate(FIELDS):
        if i >= len(header):
            raise SchemaError(f"missing column {expected!r}")
        if header[i] != expected:
            raise SchemaError(f"unexpected column {header[i]!r} at position {i} (expected {expected!r})")
    if len(header) > len(FIELDS):
        raise SchemaError(f"unknown column {header[len(FIELDS)]!r}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(FIELDS):
            raise SchemaError(f"row {lineno} has {len(row)} fields, expected {len(FIELDS)}")
        try:
            out.append(RunRecord(**{n: _parse(n, v) for n, v in zip(FIELDS, row)}))
        except ValueError as exc:
            raise SchemaError(f"row {lineno}: {exc}") from None
    return out
