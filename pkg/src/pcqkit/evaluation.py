"""Benchmarking objective scores against subjective ones.

Raw metric outputs live on arbitrary scales, so each metric is passed
through a fitted four-parameter logistic before computing accuracy
statistics:

    f(x) = b1 + (b2 - b1) / (1 + exp(-b3 (x - b4)))

The fit minimizes squared error with deterministic multi-start
Nelder-Mead. One start is a near-linear surrogate (tiny slope around the
score mean), which guarantees the fitted curve is never worse than the
best straight line; monotone metrics cannot be punished by the
nonlinearity. Reported statistics: Pearson correlation of the fitted
scores, Spearman rank correlation of the raw scores, RMSE, and the
outlier ratio against twice the per-stimulus MOS deviation (falling back
to twice the RMSE when deviations are not available).
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateInput
from .validation import check_paired

__all__ = ["logistic", "fit_logistic", "LogisticFit", "pearson", "spearman",
           "correlation_stats", "error_stats", "MetricReport", "evaluate",
           "EvaluationReport"]


def logistic(x, beta):
    b1, b2, b3, b4 = beta
    z = np.clip(b3 * (np.asarray(x, dtype=np.float64) - b4), -500.0, 500.0)
    return b1 + (b2 - b1) / (1.0 + np.exp(-z))


def pearson(x, y) -> float:
    x, y = check_paired(np.asarray(x, dtype=np.float64).reshape(-1, 1), y)
    x = x[:, 0]
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInput("correlation of a constant sequence")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def _rank_average(x) -> np.ndarray:
    """Ranks starting at 1, ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    return pearson(_rank_average(x), _rank_average(y))


def correlation_stats(scores, mos):
    """(pearson, spearman) of scores against MOS."""
    return pearson(scores, mos), spearman(scores, mos)


@dataclass(frozen=True)
class LogisticFit:
    beta: np.ndarray
    rmse: float
    n: int

    def __call__(self, x):
        return logistic(x, self.beta)


def _sse(beta, x, y) -> float:
    r = logistic(x, beta) - y
    return float(r @ r)


def _polish(beta, x, y):
    res = minimize(_sse, beta, args=(x, y), method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-15,
                            "maxiter": 8000, "maxfev": 8000})
    return res.x, res.fun


def fit_logistic(scores, mos) -> LogisticFit:
    """Least-squares four-parameter logistic, deterministic multi-start."""
    x, y = check_paired(np.asarray(scores, dtype=np.float64).reshape(-1, 1),
                        mos)
    x = x[:, 0]
    if len(x) < 5:
        raise DegenerateInput(
            f"{len(x)} points cannot constrain a 4-parameter fit")
    span = float(x.max() - x.min())
    if span == 0.0:
        raise DegenerateInput("scores are constant")

    y_lo, y_hi = float(y.min()), float(y.max())
    try:
        sign = 1.0 if spearman(x, y) >= 0.0 else -1.0
    except DegenerateInput:
        sign = 1.0
    candidates = [np.array([y_lo, y_hi, sign * 4.0 / span,
                            float(np.median(x))])]

    # near-linear surrogate: a logistic is locally linear around b4 with
    # slope b3 (b2 - b1) / 4, so a tiny b3 with a wide (b1, b2) range
    # reproduces any straight line to within curvature O(b3^2 span^2)
    slope, offset = np.polyfit(x, y, 1)
    b3_lin = 1e-4 / span
    b4_lin = float(x.mean())
    mid = offset + slope * b4_lin
    delta = 4.0 * slope / b3_lin
    candidates.append(np.array([mid - delta / 2.0, mid + delta / 2.0,
                                b3_lin, b4_lin]))

    rng = np.random.default_rng(0)
    y_range = max(y_hi - y_lo, 1e-12)
    for _ in range(20):
        candidates.append(np.array([
            y_lo + y_range * rng.uniform(-0.2, 0.2),
            y_hi + y_range * rng.uniform(-0.2, 0.2),
            sign * 4.0 / span * float(np.exp(rng.uniform(-2.0, 2.0))),
            float(rng.uniform(x.min(), x.max()))]))

    best_beta, best_sse = None, np.inf
    for beta0 in candidates:
        beta, sse = _polish(beta0, x, y)
        if sse < best_sse:
            best_beta, best_sse = beta, sse
    best_beta, best_sse = _polish(best_beta, x, y)
    return LogisticFit(best_beta, float(np.sqrt(best_sse / len(x))), len(x))


def error_stats(predicted, mos, mos_std=None):
    """(rmse, outlier_ratio, used_fallback_threshold).

    A row is an outlier when |error| exceeds twice its MOS standard
    deviation; without per-row deviations the threshold falls back to
    twice the RMSE and the flag is set.
    """
    predicted, mos = check_paired(
        np.asarray(predicted, dtype=np.float64).reshape(-1, 1), mos)
    predicted = predicted[:, 0]
    resid = predicted - mos
    rmse = float(np.sqrt(np.mean(resid * resid)))
    if mos_std is not None:
        threshold = 2.0 * np.asarray(mos_std, dtype=np.float64)
        fallback = False
    else:
        threshold = 2.0 * rmse
        fallback = True
    ratio = float(np.mean(np.abs(resid) > threshold))
    return rmse, ratio, fallback


@dataclass(frozen=True)
class MetricReport:
    name: str
    pcc: float
    srocc: float
    rmse: float
    outlier_ratio: float
    or_fallback: bool
    beta: tuple
    n: int


@dataclass(frozen=True)
class EvaluationReport:
    metrics: list                      # MetricReport, input order
    mos_min: float
    mos_max: float
    normalized: bool = True
    notes: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "mos_min": self.mos_min, "mos_max": self.mos_max,
            "normalized": self.normalized, "notes": dict(self.notes),
            "metrics": [{
                "name": m.name, "pcc": m.pcc, "srocc": m.srocc,
                "rmse": m.rmse, "outlier_ratio": m.outlier_ratio,
                "or_fallback": m.or_fallback, "beta": list(m.beta),
                "n": m.n,
            } for m in self.metrics],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        width = max([len(m.name) for m in self.metrics] + [6])
        lines = [f"{'metric':<{width}}  {'PCC':>7}  {'SROCC':>7}  "
                 f"{'RMSE':>7}  {'OR':>6}"]
        for m in self.metrics:
            flag = "*" if m.or_fallback else " "
            lines.append(f"{m.name:<{width}}  {m.pcc:>7.4f}  "
                         f"{m.srocc:>7.4f}  {m.rmse:>7.4f}  "
                         f"{m.outlier_ratio:>5.3f}{flag}")
        if any(m.or_fallback for m in self.metrics):
            lines.append("* outlier threshold fell back to 2 RMSE "
                         "(no per-row MOS deviation)")
        return "\n".join(lines) + "\n"


def evaluate(named_scores, mos, mos_std=None,
             normalize: bool = True) -> EvaluationReport:
    """Benchmark metrics against MOS.

    named_scores is a sequence of (name, scores) pairs. MOS (and its
    deviations) are scaled to [0, 1] before fitting so that RMSE and
    outlier figures are comparable across datasets.
    """
    mos = np.asarray(mos, dtype=np.float64)
    mos_lo, mos_hi = float(mos.min()), float(mos.max())
    if normalize:
        if mos_hi == mos_lo:
            raise DegenerateInput("MOS values are constant")
        y = (mos - mos_lo) / (mos_hi - mos_lo)
        std = (None if mos_std is None
               else np.asarray(mos_std, dtype=np.float64) / (mos_hi - mos_lo))
    else:
        y = mos
        std = None if mos_std is None else np.asarray(mos_std,
                                                      dtype=np.float64)
    reports = []
    for name, scores in named_scores:
        fit = fit_logistic(scores, y)
        fitted = fit(np.asarray(scores, dtype=np.float64))
        pcc = pearson(fitted, y)
        srocc = spearman(scores, y)
        rmse, ratio, fallback = error_stats(fitted, y, std)
        reports.append(MetricReport(
            name=name, pcc=pcc, srocc=srocc, rmse=rmse,
            outlier_ratio=ratio, or_fallback=fallback,
            beta=tuple(float(b) for b in fit.beta), n=fit.n))
    return EvaluationReport(reports, mos_lo, mos_hi, normalize)
