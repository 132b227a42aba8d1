"""Confusion matrices, per-class IoU and mIoU."""

from __future__ import annotations

import numpy as np

from .core import IGNORE_ID
from .errors import InvalidArgumentError, InvalidLabelError, NoScoredPointsError


class ConfusionMatrix:
    """``counts[g, p]`` = points with ground truth ``g`` predicted as ``p``.

    Treated as a value: :meth:`accumulate` returns a new matrix.
    """

    __slots__ = ("counts",)

    def __init__(self, num_classes=None, counts=None):
        if counts is None:
            if num_classes is None or num_classes < 1:
                raise InvalidArgumentError("need a positive class count")
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or (counts < 0).any():
            raise InvalidArgumentError("counts must be a square non-negative matrix")
        counts.setflags(write=False)
        self.counts = counts

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(counts=self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"

    def accumulate(self, gt, pred, ignore_id=IGNORE_ID):
        return accumulate(self, gt, pred, ignore_id)


def accumulate(cm: ConfusionMatrix, gt, pred, ignore_id=IGNORE_ID) -> ConfusionMatrix:
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    if len(gt) != len(pred):
        raise InvalidArgumentError(f"{len(gt)} ground-truth vs {len(pred)} predicted labels")
    c = cm.num_classes
    keep = gt != ignore_id
    g, p = gt[keep], pred[keep]
    for name, lab in (("ground-truth", g), ("predicted", p)):
        bad = (lab < 0) | (lab >= c)
        if bad.any():
            raise InvalidLabelError(f"{name} label {lab[bad][0]} outside [0, {c})")
    add = np.bincount(g * c + p, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(counts=cm.counts + add)


def class_stats(cm: ConfusionMatrix):
    """Per-class (tp, fp, fn) arrays."""
    tp = np.diag(cm.counts)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    return tp, fp, fn


def iou(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class IoU; NaN marks classes absent from both ground truth and prediction."""
    tp, fp, fn = class_stats(cm)
    denom = tp + fp + fn
    out = np.full(cm.num_classes, np.nan)
    np.divide(tp, denom, out=out, where=denom > 0)
    return out


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over classes with a defined IoU."""
    vals = iou(cm)
    defined = ~np.isnan(vals)
    if not defined.any():
        raise NoScoredPointsError("no class has a defined IoU")
    return float(vals[defined].mean())


def report(cm: ConfusionMatrix) -> str:
    tp, fp, fn = class_stats(cm)
    vals = iou(cm)
    lines = []
    for c in range(cm.num_classes):
        v = "undefined" if np.isnan(vals[c]) else f"{vals[c]:.6f}"
        lines.append(f"class={c} iou={v} tp={tp[c]} fp={fp[c]} fn={fn[c]}")
    lines.append(f"miou={miou(cm):.6f} scored_classes={int((~np.isnan(vals)).sum())}")
    return "\n".join(lines)
