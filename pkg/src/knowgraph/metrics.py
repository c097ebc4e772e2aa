"""Detection and calibration metrics: ROC AUC, AP at a proportion, TP@FP, ECE.

All functions are pure and operate on parallel score/label arrays.  Ties are
handled with a stable sort and index tiebreak; AUC credits ties 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Invalid metric input (e.g. a single-class label set for AUC)."""


@dataclass(frozen=True)
class ScoredSet:
    """Scores with binary labels, validated for length and label values."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if scores.ndim != 1 or labels.ndim != 1:
            raise MetricError("scores and labels must be 1-D")
        if scores.shape != labels.shape:
            raise MetricError(f"length mismatch: {scores.shape} vs {labels.shape}")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise MetricError("labels must be 0 or 1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.scores.size

    @property
    def positives(self) -> int:
        return int(self.labels.sum())

    def require_both_classes(self, what: str) -> None:
        if self.positives == 0 or self.positives == self.n:
            raise MetricError(f"{what} undefined: only one class present")


@dataclass(frozen=True)
class CalibrationReport:
    """Equal-width confidence bins and the expected calibration error."""

    bins: tuple[tuple[float, float, int], ...]  # (mean_confidence, fraction_positive, count)
    ece: float

    def __post_init__(self):
        if not (0.0 <= self.ece <= 1.0):
            raise MetricError(f"ece {self.ece} outside [0, 1]")


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank of the tie group."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        avg = 0.5 * (i + j) + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def roc_auc(scored: ScoredSet) -> float:
    """Mann-Whitney AUC; tied score pairs count 0.5."""
    scored.require_both_classes("roc_auc")
    ranks = _average_ranks(scored.scores)
    pos = scored.positives
    neg = scored.n - pos
    rank_sum = ranks[scored.labels == 1].sum()
    return float((rank_sum - pos * (pos + 1) / 2.0) / (pos * neg))


def _descending_order(scores: np.ndarray) -> np.ndarray:
    # Stable sort descending with original index as tiebreak.
    return np.argsort(-scores, kind="stable")


def average_precision_at_k(scored: ScoredSet, k: float = 0.5) -> float:
    """AP over the top ceil(k*N) ranked items.

    Mean of precision@r over positive ranks r <= ceil(k*N), normalized by
    min(total positives, ceil(k*N)).  Returns 0.0 when there are no
    positives at all.
    """
    if not (0.0 < k <= 1.0):
        raise MetricError(f"k {k} outside (0, 1]")
    m = int(np.ceil(k * scored.n))
    if m < 1:
        raise MetricError("k*N < 1: no items to rank")
    if scored.positives == 0:
        return 0.0
    order = _descending_order(scored.scores)
    top = scored.labels[order][:m]
    hits = np.cumsum(top)
    ranks = np.arange(1, m + 1)
    prec_at_pos = (hits / ranks)[top == 1]
    denom = min(scored.positives, m)
    return float(prec_at_pos.sum() / denom)


def tp_at_fp(scored: ScoredSet, fp_rate: float) -> float:
    """Max TPR over thresholds whose FPR does not exceed ``fp_rate``.

    Thresholds sweep the observed scores (predict positive at score >=
    threshold), plus the empty-prediction point above the max score.
    """
    if not (0.0 <= fp_rate <= 1.0):
        raise MetricError(f"fp_rate {fp_rate} outside [0, 1]")
    scored.require_both_classes("tp_at_fp")
    order = _descending_order(scored.scores)
    labels = scored.labels[order]
    scores = scored.scores[order]
    pos = scored.positives
    neg = scored.n - pos
    tp = np.cumsum(labels)
    fp = np.cumsum(1 - labels)
    # Valid cut points are the last index of each distinct score value.
    last_of_value = np.ones(scored.n, dtype=bool)
    last_of_value[:-1] = scores[:-1] != scores[1:]
    tpr = tp[last_of_value] / pos
    fpr = fp[last_of_value] / neg
    best = 0.0  # empty-prediction point: TPR 0 at FPR 0
    feasible = fpr <= fp_rate + 1e-12
    if feasible.any():
        best = float(tpr[feasible].max())
    return best


def ece(probs, labels, n_bins: int = 20) -> CalibrationReport:
    """Expected calibration error over equal-width probability bins.

    Bins are [i/B, (i+1)/B) with the last bin closed; empty bins contribute
    zero and report (0, 0, 0).
    """
    scored = ScoredSet(np.asarray(probs, dtype=np.float64), np.asarray(labels))
    p = scored.scores
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise MetricError("probabilities outside [0, 1]")
    idx = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    bins = []
    total = 0.0
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            bins.append((0.0, 0.0, 0))
            continue
        conf = float(p[mask].mean())
        frac = float(scored.labels[mask].mean())
        total += (count / p.size) * abs(conf - frac)
        bins.append((conf, frac, count))
    return CalibrationReport(bins=tuple(bins), ece=float(total))


def metric_report(
    scored: ScoredSet,
    ap_k: float = 0.5,
    fp_points: tuple[float, ...] = (0.005, 0.01, 0.02),
    n_bins: int = 20,
) -> dict:
    """Full JSON-ready metric block used by reports and the eval command."""
    cal = ece(scored.scores, scored.labels, n_bins=n_bins)
    return {
        "auc": roc_auc(scored),
        "ap": average_precision_at_k(scored, k=1.0),
        "ap_k": average_precision_at_k(scored, k=ap_k),
        "k": ap_k,
        "tp_at_fp": {f"{p:g}": tp_at_fp(scored, p) for p in fp_points},
        "ece": cal.ece,
        "bins": [list(b) for b in cal.bins],
        "n": scored.n,
        "positives": scored.positives,
    }
