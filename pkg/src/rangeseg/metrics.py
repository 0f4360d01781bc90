"""Confusion-matrix accumulation and mean intersection-over-union."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    """Raised for degenerate metric inputs (e.g. an empty confusion matrix)."""


@dataclass
class ConfusionMatrix:
    """Per-class counts with rows = ground truth, columns = prediction.

    Points whose ground truth equals ``ignore_id`` are never counted.
    Matrices covering the same classes merge by addition, so evaluation
    can be sharded and summed.
    """

    class_count: int
    ignore_id: int | None = None
    counts: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.class_count < 1:
            raise MetricError(f"class_count must be >= 1, got {self.class_count}")
        self.counts = np.zeros((self.class_count, self.class_count), dtype=np.int64)

    def update(self, truth: np.ndarray, prediction: np.ndarray) -> None:
        truth = np.asarray(truth).reshape(-1)
        prediction = np.asarray(prediction).reshape(-1)
        if truth.shape != prediction.shape:
            raise MetricError(
                f"truth {truth.shape} and prediction {prediction.shape} differ"
            )
        keep = (truth >= 0) & (truth < self.class_count)
        keep &= (prediction >= 0) & (prediction < self.class_count)
        if self.ignore_id is not None:
            keep &= truth != self.ignore_id
        flat = truth[keep] * self.class_count + prediction[keep]
        binned = np.bincount(flat, minlength=self.class_count**2)
        self.counts += binned.reshape(self.class_count, self.class_count)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_count != self.class_count or other.ignore_id != self.ignore_id:
            raise MetricError("cannot merge confusion matrices with different layouts")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def miou(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class IoU = TP / (TP + FP + FN) and their mean.

    Classes with TP + FP + FN = 0 are excluded from the mean and reported
    as NaN; the ignore class (when set) is always excluded.
    """
    if cm.total == 0:
        raise MetricError("confusion matrix is empty")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    ious = np.full(cm.class_count, np.nan)
    scored = denom > 0
    if cm.ignore_id is not None:
        scored[cm.ignore_id] = False
    ious[scored] = tp[scored] / denom[scored]
    if not scored.any():
        raise MetricError("no scored classes in confusion matrix")
    return ious, float(np.nanmean(ious[scored]))
