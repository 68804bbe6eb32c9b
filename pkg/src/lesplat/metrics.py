"""Segmentation metrics: accuracy, precision, IoU, and ranking-based AP.

Aggregates follow the reporting convention of a per-class comparison
table: mIoU and mAP are means over classes, while accuracy and precision
are micro-averaged by pooling pixel counts across classes. Denominator-
free cases yield 0 and mark the class as degenerate rather than raising.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .relevancy import RelevancyMap, SegMask


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
            fn=self.fn + other.fn,
        )


def confusion(pred: SegMask, gt: SegMask) -> ConfusionCounts:
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ValueError("prediction and ground truth dimensions differ")
    p, g = pred.mask, gt.mask
    return ConfusionCounts(
        tp=int(np.sum(p & g)),
        fp=int(np.sum(p & ~g)),
        tn=int(np.sum(~p & ~g)),
        fn=int(np.sum(~p & g)),
    )


def iou(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp + c.fn
    return c.tp / denom if denom else 0.0


def precision(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp
    return c.tp / denom if denom else 0.0


def recall(c: ConfusionCounts) -> float:
    denom = c.tp + c.fn
    return c.tp / denom if denom else 0.0


def accuracy(c: ConfusionCounts) -> float:
    return (c.tp + c.tn) / c.total if c.total else 0.0


def is_degenerate(c: ConfusionCounts) -> bool:
    """True when IoU or precision had an empty denominator."""
    return (c.tp + c.fp + c.fn) == 0 or (c.tp + c.fp) == 0


def average_precision(scores, gt: SegMask) -> float:
    """Ranking AP: rank pixels by descending score, average precision at hits.

    Ties are broken deterministically by row-major pixel order. Raises if
    the ground truth has no positive pixel.
    """
    values = scores.scores if isinstance(scores, RelevancyMap) else np.asarray(scores)
    if values.shape != gt.mask.shape:
        raise ValueError("score map and ground truth dimensions differ")
    flat_scores = values.reshape(-1)
    flat_gt = gt.mask.reshape(-1)
    n_pos = int(flat_gt.sum())
    if n_pos == 0:
        raise ValueError("ground truth has no positive pixels")
    order = np.argsort(-flat_scores, kind="stable")
    hits = flat_gt[order]
    cum_tp = np.cumsum(hits)
    ranks = np.arange(1, flat_gt.size + 1)
    return float(np.mean((cum_tp / ranks)[hits]))


@dataclass(frozen=True)
class ClassEval:
    name: str
    pred: SegMask
    scores: RelevancyMap | np.ndarray
    gt: SegMask


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    miou: float
    map: float
    per_class: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "accuracy": self.accuracy,
                "precision": self.precision,
                "miou": self.miou,
                "map": self.map,
                "per_class": self.per_class,
            },
            indent=2,
            sort_keys=True,
        )


def evaluate(classes: list[ClassEval]) -> MetricsReport:
    """Per-class metrics plus the four aggregate columns."""
    if not classes:
        raise ValueError("at least one class is required")
    per_class = {}
    pooled = ConfusionCounts(0, 0, 0, 0)
    ious, aps = [], []
    for ce in classes:
        counts = confusion(ce.pred, ce.gt)
        pooled = pooled + counts
        class_iou = iou(counts)
        class_ap = average_precision(ce.scores, ce.gt)
        ious.append(class_iou)
        aps.append(class_ap)
        per_class[ce.name] = {
            "iou": class_iou,
            "precision": precision(counts),
            "ap": class_ap,
            "degenerate": is_degenerate(counts),
        }
    return MetricsReport(
        accuracy=accuracy(pooled),
        precision=precision(pooled),
        miou=float(np.mean(ious)),
        map=float(np.mean(aps)),
        per_class=per_class,
    )
