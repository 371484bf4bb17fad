"""Three-class discretisation and one-vs-rest classification metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

CLASSES = (0, 1, 2)
CLASS_NAMES = ("healthy", "weak", "ill")


def discretize(x, thresholds=(2 / 3, 4 / 3)):
    """0 if ``x <= low``, 2 if ``x >= high`` and 1 in between."""
    lo, hi = thresholds
    x = np.asarray(x, dtype=float)
    out = np.where(x <= lo, 0, np.where(x >= hi, 2, 1))
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ConfusionMatrix3:
    counts: np.ndarray  # rows: true class, columns: predicted class

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (3, 3) or np.any(c < 0):
            raise ValueError("confusion counts must be a nonnegative 3x3 array")
        object.__setattr__(self, "counts", c)

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix3(self.counts + other.counts)


@dataclass(frozen=True)
class ClassMetrics:
    cls: int
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    specificity: Optional[float]
    f1: Optional[float]


def confusion(true, pred) -> ConfusionMatrix3:
    true = np.asarray(true, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if true.shape != pred.shape:
        raise ValueError(f"length mismatch: {true.size} true vs {pred.size} predicted")
    if true.size and (min(true.min(), pred.min()) < 0 or max(true.max(), pred.max()) > 2):
        raise ValueError("classes must be 0, 1 or 2")
    c = np.zeros((3, 3), dtype=np.int64)
    np.add.at(c, (true, pred), 1)
    return ConfusionMatrix3(c)


def _ratio(num, den):
    return num / den if den > 0 else None


def class_metrics(cm: ConfusionMatrix3) -> List[ClassMetrics]:
    """Per-class metrics; a ratio with a zero denominator is ``None``."""
    c = cm.counts
    n = c.sum()
    out = []
    for i in CLASSES:
        tp = int(c[i, i])
        fp = int(c[:, i].sum()) - tp
        fn = int(c[i, :].sum()) - tp
        tn = int(n) - tp - fp - fn
        prec = _ratio(tp, tp + fp)
        rec = _ratio(tp, tp + fn)
        if prec is None or rec is None:
            f1 = None
        else:
            f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        out.append(ClassMetrics(i, _ratio(tp + tn, n), prec, rec, _ratio(tn, tn + fp), f1))
    return out


def evaluate(true, pred):
    cm = confusion(true, pred)
    return cm, class_metrics(cm)


def overall_accuracy(cm: ConfusionMatrix3) -> Optional[float]:
    return _ratio(int(np.trace(cm.counts)), cm.total)
