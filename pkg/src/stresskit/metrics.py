"""Classification metrics: AUC, thresholded rates, F1, and calibration error.

All metrics return None where they are undefined (single-class inputs,
empty cells) instead of silently dropping or zero-filling; the undefined
marker is carried through result tables and reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, SubgroupPartition
from .errors import AlignmentError, StressKitError

__all__ = [
    "METRIC_NAMES",
    "HIGHER_BETTER",
    "ConfusionCounts",
    "Rates",
    "ThresholdChoice",
    "ThresholdVector",
    "CalibrationBins",
    "MetricResult",
    "roc_auc",
    "confusion_at",
    "rates",
    "select_threshold",
    "select_thresholds",
    "calibration_bins",
    "ece",
    "stratified_eval",
]

METRIC_NAMES = ("AUC", "F1", "TPR", "FPR", "ECE")
HIGHER_BETTER = frozenset({"AUC", "F1", "TPR"})

THRESHOLD_POLICIES = ("fixed", "f1-optimal-on-clean")


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise StressKitError(f"scores/labels shape mismatch: {s.shape} vs {y.shape}")
    return s, y.astype(np.int64)


def _tie_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their run."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float | None:
    """Probability a random positive outscores a random negative, ties at 1/2.

    Rank-based O(n log n) evaluation of the pairwise statistic; returns None
    when either class is empty.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _tie_ranks(s)
    rank_sum = float(ranks[y == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
            fn=self.fn + other.fn,
        )


def confusion_at(scores, labels, threshold: float) -> ConfusionCounts:
    """Tally the confusion table; a score equal to the threshold counts positive."""
    s, y = _as_arrays(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


@dataclass(frozen=True)
class Rates:
    tpr: float | None
    fpr: float | None
    f1: float | None


def rates(c: ConfusionCounts) -> Rates:
    tpr = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else None
    fpr = c.fp / (c.fp + c.tn) if (c.fp + c.tn) > 0 else None
    denom = 2 * c.tp + c.fp + c.fn
    f1 = 2 * c.tp / denom if denom > 0 else None
    return Rates(tpr=tpr, fpr=fpr, f1=f1)


@dataclass(frozen=True)
class ThresholdChoice:
    threshold: float
    policy: str
    fallback: bool = False  # degenerate input forced the fixed 0.5 default


def select_threshold(scores, labels, policy: str) -> ThresholdChoice:
    """Pick the operating threshold on clean scores.

    "fixed" always yields 0.5. "f1-optimal-on-clean" sweeps the midpoints of
    consecutive distinct scores and keeps the F1-maximizing one, breaking
    ties toward the larger threshold. Degenerate inputs (no positives, or
    fewer than two distinct scores) fall back to 0.5 with a flag.
    """
    if policy not in THRESHOLD_POLICIES:
        raise StressKitError(f"unknown threshold policy {policy!r}")
    if policy == "fixed":
        return ThresholdChoice(threshold=0.5, policy=policy)
    s, y = _as_arrays(scores, labels)
    n = s.size
    n_pos = int((y == 1).sum())
    order = np.argsort(s, kind="mergesort")
    ss, yy = s[order], y[order]
    distinct, starts = np.unique(ss, return_index=True)
    if n_pos == 0 or distinct.size < 2:
        return ThresholdChoice(threshold=0.5, policy=policy, fallback=True)
    # A midpoint between distinct[k] and distinct[k+1] predicts positive
    # exactly the samples with score >= distinct[k+1]; suffix counts give
    # the confusion table for every candidate at once.
    pos_cum = np.concatenate([[0], np.cumsum(yy == 1)])
    cut = starts[1:]  # first index of each upper distinct value
    tp = n_pos - pos_cum[cut]
    fp = (n - cut) - tp
    fn = n_pos - tp
    f1 = 2.0 * tp / (2.0 * tp + fp + fn)  # denominator >= n_pos >= 1
    # ties break toward the larger threshold; midpoints ascend, so take the
    # last argmax
    k = f1.size - 1 - int(np.argmax(f1[::-1]))
    threshold = float((distinct[k] + distinct[k + 1]) / 2.0)
    return ThresholdChoice(threshold=threshold, policy=policy)


@dataclass(frozen=True)
class ThresholdVector:
    """Frozen per-class operating thresholds with their provenance."""

    class_names: tuple[str, ...]
    thresholds: tuple[float, ...]
    policy: str
    fallbacks: tuple[bool, ...]

    def threshold_for(self, class_index: int) -> float:
        return self.thresholds[class_index]

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "per_class": {
                c: {"threshold": t, "fallback": f}
                for c, t, f in zip(self.class_names, self.thresholds, self.fallbacks)
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdVector":
        names = tuple(d["per_class"].keys())
        return cls(
            class_names=names,
            thresholds=tuple(float(d["per_class"][c]["threshold"]) for c in names),
            policy=d["policy"],
            fallbacks=tuple(bool(d["per_class"][c]["fallback"]) for c in names),
        )


def select_thresholds(values: np.ndarray, ds: Dataset, policy: str) -> ThresholdVector:
    """Apply the policy per class over aligned clean scores."""
    choices = [
        select_threshold(values[:, ci], ds.labels_column(ci), policy)
        for ci in range(len(ds.class_names))
    ]
    return ThresholdVector(
        class_names=ds.class_names,
        thresholds=tuple(c.threshold for c in choices),
        policy=policy,
        fallbacks=tuple(c.fallback for c in choices),
    )


@dataclass(frozen=True)
class CalibrationBins:
    """Equal-width bins over [0, 1]; a score lands in bin min(floor(s*n), n-1),
    so interior bins are right-open and the last bin includes 1.0."""

    n_bins: int
    counts: tuple[int, ...]
    mean_confidence: tuple[float | None, ...]
    accuracy: tuple[float | None, ...]


def calibration_bins(scores, labels, n_bins: int) -> CalibrationBins:
    if n_bins < 1:
        raise StressKitError(f"n_bins must be >= 1, got {n_bins}")
    s, y = _as_arrays(scores, labels)
    idx = np.minimum(np.floor(s * n_bins).astype(np.int64), n_bins - 1)
    counts, confs, accs = [], [], []
    for b in range(n_bins):
        mask = idx == b
        cnt = int(mask.sum())
        counts.append(cnt)
        if cnt == 0:
            confs.append(None)
            accs.append(None)
        else:
            confs.append(float(s[mask].mean()))
            accs.append(float(y[mask].mean()))
    return CalibrationBins(
        n_bins=n_bins,
        counts=tuple(counts),
        mean_confidence=tuple(confs),
        accuracy=tuple(accs),
    )


def ece(scores, labels, n_bins: int) -> float | None:
    """Bin-weighted mean absolute gap between confidence and accuracy."""
    s, _ = _as_arrays(scores, labels)
    if s.size == 0:
        return None
    bins = calibration_bins(scores, labels, n_bins)
    total = 0.0
    n = s.size
    for cnt, conf, acc in zip(bins.counts, bins.mean_confidence, bins.accuracy):
        if cnt:
            total += (cnt / n) * abs(acc - conf)
    return total


@dataclass(frozen=True)
class MetricResult:
    """One cell of the long-format result table; level 0 marks the clean pass."""

    dataset: str
    class_name: str
    subgroup: str
    kind: str
    level: int
    metric: str
    value: float | None
    n: int


def stratified_eval(
    values: np.ndarray,
    ds: Dataset,
    partition: SubgroupPartition,
    thresholds: ThresholdVector,
    n_bins: int,
    *,
    kind: str = "clean",
    level: int = 0,
) -> list[MetricResult]:
    """Compute every metric for every (class, subgroup) cell.

    Cells where a metric is undefined (empty subgroup, single-class labels)
    are emitted with value None rather than dropped, so downstream grids
    stay complete.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape != (len(ds.samples), len(ds.class_names)):
        raise AlignmentError(
            f"score matrix shape {values.shape} does not match dataset "
            f"({len(ds.samples)} samples x {len(ds.class_names)} classes)"
        )
    if thresholds.class_names != ds.class_names:
        raise AlignmentError("threshold vector classes do not match dataset classes")
    out: list[MetricResult] = []
    for ci, cls in enumerate(ds.class_names):
        col = values[:, ci]
        labels = np.asarray(ds.labels_column(ci), dtype=np.int64)
        t = thresholds.threshold_for(ci)
        for group, indices in partition.groups.items():
            idx = np.asarray(indices, dtype=np.int64)
            n = int(idx.size)
            if n == 0:
                cells: dict[str, float | None] = {m: None for m in METRIC_NAMES}
            else:
                gs, gy = col[idx], labels[idx]
                r = rates(confusion_at(gs, gy, t))
                cells = {
                    "AUC": roc_auc(gs, gy),
                    "F1": r.f1,
                    "TPR": r.tpr,
                    "FPR": r.fpr,
                    "ECE": ece(gs, gy, n_bins),
                }
            for metric in METRIC_NAMES:
                out.append(
                    MetricResult(
                        dataset=ds.name,
                        class_name=cls,
                        subgroup=group,
                        kind=kind,
                        level=level,
                        metric=metric,
                        value=cells[metric],
                        n=n,
                    )
                )
    return out
