"""Binary classification metrics with phishing (label 1) as the positive class."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    # set when a ratio had a zero denominator and was reported as 0
    precision_undefined: bool = False
    recall_undefined: bool = False
    f1_undefined: bool = False

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(**d)


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> Metrics:
    total = tp + fp + tn + fn
    if total <= 0:
        raise UsageError("metrics need at least one prediction")
    p_undef = tp + fp == 0
    r_undef = tp + fn == 0
    precision = 0.0 if p_undef else tp / (tp + fp)
    recall = 0.0 if r_undef else tp / (tp + fn)
    f_undef = precision + recall == 0
    # 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN), which avoids a second rounding
    f1 = 0.0 if f_undef else 2 * tp / (2 * tp + fp + fn)
    return Metrics((tp + tn) / total, precision, recall, f1, tp, fp, tn, fn,
                   p_undef, r_undef, f_undef)


def compute_metrics(predictions, labels) -> Metrics:
    p = np.asarray(predictions).astype(np.int64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    if p.shape != y.shape:
        raise UsageError(f"{p.size} predictions but {y.size} labels")
    if p.size == 0:
        raise UsageError("metrics need at least one prediction")
    for name, arr in (("prediction", p), ("label", y)):
        if not ((arr == 0) | (arr == 1)).all():
            raise UsageError(f"every {name} must be 0 or 1")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    return metrics_from_counts(tp, fp, tn, fn)
