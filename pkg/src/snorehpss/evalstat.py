"""Confusion-matrix metrics, ROC/AUC, the Wilcoxon signed-rank test and box-plot summaries.

Undefined ratios (zero denominators) are reported as ``None`` rather than 0.
The positive class is the snore mixture (label 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 25
ALTERNATIVES = ("two-sided", "greater", "less")


class DegenerateSampleError(ValueError):
    """All paired differences are zero."""


# --------------------------------------------------------------------------- confusion metrics

@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a nonnegative integer")
            object.__setattr__(self, name, int(value))

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    acc: Optional[float]
    sen: Optional[float]
    spe: Optional[float]
    prec: Optional[float]
    sco: Optional[float]
    f1: Optional[float]
    auc: Optional[float] = None

    def with_auc(self, auc: float) -> "MetricsReport":
        return MetricsReport(self.acc, self.sen, self.spe, self.prec, self.sco, self.f1, auc)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def _binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values).ravel()
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be binary")
    return arr.astype(bool)


def confusion(predictions, labels) -> ConfusionMatrix:
    pred = _binary(predictions, "predictions")
    true = _binary(labels, "labels")
    if pred.size != true.size:
        raise ValueError("predictions and labels differ in length")
    if pred.size == 0:
        raise ValueError("need at least one prediction")
    return ConfusionMatrix(tp=int(np.sum(pred & true)), tn=int(np.sum(~pred & ~true)),
                           fp=int(np.sum(pred & ~true)), fn=int(np.sum(~pred & true)))


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def metrics(c: ConfusionMatrix) -> MetricsReport:
    if c.total == 0:
        raise ValueError("confusion matrix is empty")
    acc = (c.tp + c.tn) / c.total
    sen = _ratio(c.tp, c.tp + c.fn)
    spe = _ratio(c.tn, c.tn + c.fp)
    prec = _ratio(c.tp, c.tp + c.fp)
    sco = (sen + spe) / 2 if sen is not None and spe is not None else None
    f1 = None
    if prec is not None and sen is not None and prec + sen > 0:
        f1 = 2 * prec * sen / (prec + sen)
    return MetricsReport(acc, sen, spe, prec, sco, f1)


# --------------------------------------------------------------------------- ROC

@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending, starts at +inf and ends at -inf
    fpr: np.ndarray
    tpr: np.ndarray

    def to_csv(self) -> str:
        rows = ["threshold,fpr,tpr"]
        rows += [f"{t!r},{f!r},{p!r}" for t, f, p in
                 zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist())]
        return "\n".join(rows) + "\n"


def roc_auc(scores, labels) -> tuple[RocCurve, float]:
    """ROC sweep over the unique scores plus the two endpoints, and the AUC.

    An item counts as positive at threshold t when score >= t, so tied scores
    move together. The AUC is the Mann-Whitney statistic with ties counted 1/2,
    which equals the trapezoidal area under this curve.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary(labels, "labels")
    if s.size != y.size:
        raise ValueError("scores and labels differ in length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")

    uniq = np.unique(s)[::-1]
    # counts of positives/negatives with score >= each unique value
    order = np.searchsorted(np.sort(s[y]), uniq, side="left")
    tp = n_pos - order
    fp = n_neg - np.searchsorted(np.sort(s[~y]), uniq, side="left")
    thresholds = np.concatenate([[np.inf], uniq, [-np.inf]])
    tpr = np.concatenate([[0.0], tp / n_pos, [1.0]])
    fpr = np.concatenate([[0.0], fp / n_neg, [1.0]])

    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return RocCurve(thresholds, fpr, tpr), float(u / (n_pos * n_neg))


# --------------------------------------------------------------------------- Wilcoxon

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    n_effective: int
    p_value: float
    method: str
    alternative: str = "two-sided"
    significant_at_0_05: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each value of 2*W, for 2*W = 0 .. sum."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    reach = 0
    for r in doubled_ranks.tolist():
        counts[r:reach + r + 1] += counts[:reach + 1].copy()
        reach += r
    return counts


def wilcoxon_signed_rank(a, b, alternative: str = "two-sided",
                         exact_max_n: int = EXACT_MAX_N) -> WilcoxonResult:
    """Paired signed-rank test of a against b (``greater`` means a tends to exceed b).

    Zero differences are dropped. W is the rank sum of the positive
    differences. For up to ``exact_max_n`` nonzero differences the p-value is
    the exact proportion of the 2**n equally likely sign patterns; the counts
    come from a subset-sum recursion over doubled (integer) ranks, which
    equals full enumeration. Otherwise a normal approximation with
    tie-corrected variance and a 0.5 continuity correction is used.
    The two-sided p-value is P(|W - S/2| >= |W_obs - S/2|), S the rank total.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError("paired samples differ in length")
    if a.size < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise DegenerateSampleError("all paired differences are zero")

    ranks = rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())
    total = float(ranks.sum())

    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _signed_rank_counts(doubled)
        w2 = int(round(2 * w))
        s2 = int(doubled.sum())
        values = np.arange(s2 + 1)
        if alternative == "two-sided":
            hit = np.abs(2 * values - s2) >= abs(2 * w2 - s2)
        elif alternative == "greater":
            hit = values >= w2
        else:
            hit = values <= w2
        p = float(counts[hit].sum()) / float(2 ** n)
        method = "exact"
    else:
        mean = total / 2.0
        sd = math.sqrt(float(np.sum(ranks ** 2)) / 4.0)
        if alternative == "two-sided":
            p = 2.0 * norm.sf(max(abs(w - mean) - 0.5, 0.0) / sd)
        elif alternative == "greater":
            p = norm.sf((w - mean - 0.5) / sd)
        else:
            p = norm.cdf((w - mean + 0.5) / sd)
        p = float(p)
        method = "normal_approx"
    p = min(max(p, 0.0), 1.0)
    return WilcoxonResult(w, n, p, method, alternative, p < 0.05)


# --------------------------------------------------------------------------- box plots

@dataclass(frozen=True)
class BoxplotSummary:
    q1: float
    median: float
    q3: float
    mean: float
    whisker_low: float
    whisker_high: float
    outliers: tuple

    def to_dict(self) -> dict:
        return asdict(self)


def _median_sorted(x: np.ndarray) -> float:
    n = x.size
    return float(x[n // 2]) if n % 2 else float((x[n // 2 - 1] + x[n // 2]) / 2.0)


def summarize_boxplot(data) -> BoxplotSummary:
    """Quartiles as medians of the lower and upper halves; for odd n the
    overall median is excluded from both halves. Points strictly beyond
    1.5 IQR from the quartiles are outliers."""
    x = np.sort(np.asarray(data, dtype=np.float64).ravel())
    n = x.size
    if n < 4:
        raise ValueError("need at least 4 points")
    half = n // 2
    q1 = _median_sorted(x[:half])
    q3 = _median_sorted(x[n - half:])
    iqr = q3 - q1
    low_fence, high_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= low_fence) & (x <= high_fence)]
    outliers = tuple(float(v) for v in x[(x < low_fence) | (x > high_fence)])
    return BoxplotSummary(q1, _median_sorted(x), q3, float(x.mean()),
                          float(inside.min()), float(inside.max()), outliers)
