"""Evaluation metrics: AUC, LogLoss, sliced reports, paired significance test.

AUC uses the average-rank (Mann-Whitney) estimator, which matches the
pairwise definition exactly, ties counted one half. Slices with a single
label class report their metric as absent rather than a sentinel number.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata
from scipy.stats import t as t_dist

from .errors import ShapeError, UndefinedMetricError

Array = np.ndarray

LOGLOSS_CLAMP = 1e-7

SLICES = ("overall", "aligned", "unaligned")


def auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative.

    Computed via average ranks; exactly equivalent to the mean over all
    positive/negative pairs of [s+ > s-] + 0.5 [s+ == s-].
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeError(f"scores {s.shape} vs labels {y.shape}")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos + n_neg != y.size:
        raise ShapeError("labels must be binary 0/1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    pos_rank_sum = float(np.sum(ranks[y == 1]))
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def logloss(scores, labels) -> float:
    """Mean binary cross-entropy with scores clamped to [1e-7, 1 - 1e-7]."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeError(f"scores {s.shape} vs labels {y.shape}")
    if s.size == 0:
        raise UndefinedMetricError("logloss of an empty slice is undefined")
    p = np.clip(s, LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


@dataclass
class SliceMetrics:
    auc: float | None
    logloss: float | None
    n: int
    n_pos: int


@dataclass
class MetricsReport:
    """AUC/LogLoss per slice plus the metadata needed to regenerate the run."""

    method: str
    seeds: dict
    config_digest: str
    slices: dict[str, SliceMetrics]

    def to_json(self) -> str:
        doc = {
            "method": self.method,
            "seeds": self.seeds,
            "config_digest": self.config_digest,
            "slices": {
                name: {"auc": m.auc, "logloss": m.logloss, "n": m.n, "n_pos": m.n_pos}
                for name, m in self.slices.items()
            },
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        slices = {name: SliceMetrics(**m) for name, m in doc["slices"].items()}
        return cls(doc["method"], doc["seeds"], doc["config_digest"], slices)


def _slice_metrics(scores: Array, labels: Array) -> SliceMetrics:
    n = int(scores.size)
    n_pos = int(np.sum(labels == 1)) if n else 0
    try:
        a = auc(scores, labels) if n else None
    except UndefinedMetricError:
        a = None
    try:
        ll = logloss(scores, labels) if n else None
    except UndefinedMetricError:
        ll = None
    return SliceMetrics(a, ll, n, n_pos)


def slice_report(preds, method: str = "", seeds: dict | None = None,
                 config_digest: str = "") -> MetricsReport:
    """Metrics three ways: all rows, aligned rows only, unaligned rows only.

    preds must expose scores, labels and slice_tags arrays (a PredictionSet).
    """
    scores = np.asarray(preds.scores, dtype=np.float64)
    labels = np.asarray(preds.labels, dtype=np.float64)
    tags = np.asarray(preds.slice_tags)
    if scores.size == 0:
        raise UndefinedMetricError("empty prediction set")
    slices = {"overall": _slice_metrics(scores, labels)}
    for name in ("aligned", "unaligned"):
        mask = tags == name
        slices[name] = _slice_metrics(scores[mask], labels[mask])
    return MetricsReport(method, seeds or {}, config_digest, slices)


def paired_ttest(metric_runs_a, metric_runs_b) -> tuple[float, float]:
    """Two-sided paired t-test over per-seed metric differences.

    Degenerate cases: all differences zero reports (0, 1); zero variance
    with a nonzero shift reports (signed inf, 0).
    """
    a = np.asarray(metric_runs_a, dtype=np.float64)
    b = np.asarray(metric_runs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"paired runs {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ShapeError("paired t-test needs at least 2 runs")
    d = a - b
    mean = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return float(np.sign(mean)) * float("inf"), 0.0
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * float(t_dist.sf(abs(t), n - 1))
    return float(t), p
