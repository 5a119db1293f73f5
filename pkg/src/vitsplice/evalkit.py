"""Pixel-level mask metrics and size-bucketed reports.

When a ratio's denominator is zero (nothing predicted and/or nothing to
find) the metric is defined as 1.0.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .morphology import connected_components

SIZE_BUCKETS = (16, 32, 64, 128, 256, "other")
METRICS = ("precision", "recall", "f1", "jaccard")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, gt) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def f1(c: ConfusionCounts) -> float:
    """Dice score ``2TP / (2TP + FP + FN)``."""
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def jaccard(c: ConfusionCounts) -> float:
    """Intersection over union ``TP / (TP + FP + FN)``."""
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def all_metrics(c: ConfusionCounts) -> dict[str, float]:
    return {"precision": precision(c), "recall": recall(c), "f1": f1(c), "jaccard": jaccard(c)}


def size_bucket(gt, buckets: Sequence = SIZE_BUCKETS):
    """Bucket from the largest ground-truth component's bounding-box max side."""
    _, stats = connected_components(gt)
    if not stats:
        return "other"
    side = max(s.max_side for s in stats)
    return side if side in buckets else "other"


@dataclass
class ImageResult:
    image_id: str
    bucket: object
    counts: ConfusionCounts
    metrics: dict[str, float]


@dataclass
class EvalReport:
    images: list[ImageResult]
    buckets: tuple = SIZE_BUCKETS
    overall: dict[str, float] = field(default_factory=dict)
    per_bucket: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id", "bucket", *METRICS])
        for r in self.images:
            w.writerow([r.image_id, r.bucket, *(repr(float(r.metrics[m])) for m in METRICS)])
        return buf.getvalue()

    def table(self) -> str:
        """Plain-text table with F1 then JI columns per size bucket."""
        keys = [b for b in self.buckets if b in self.per_bucket]
        cols = [f"F1_{b}" for b in keys] + [f"JI_{b}" for b in keys] + ["F1", "JI"]
        vals = [self.per_bucket[b]["f1"] for b in keys] + [self.per_bucket[b]["jaccard"] for b in keys]
        vals += [self.overall.get("f1", float("nan")), self.overall.get("jaccard", float("nan"))]
        width = max(8, *(len(c) for c in cols))
        head = "".join(c.rjust(width) for c in cols)
        row = "".join(f"{v:.3f}".rjust(width) for v in vals)
        return f"{head}\n{row}\n"


def bucket_report(
    items: Iterable[tuple], ids: Sequence[str] | None = None, buckets: Sequence = SIZE_BUCKETS
) -> EvalReport:
    """Mean metrics per size bucket over ``(pred, gt, tag)`` triples."""
    buckets = tuple(buckets)
    results = []
    for i, (pred, gt, tag) in enumerate(items):
        if tag not in buckets:
            raise ConfigError(f"unknown size tag {tag!r}; expected one of {buckets}")
        c = confusion(pred, gt)
        name = ids[i] if ids is not None else str(i)
        results.append(ImageResult(name, tag, c, all_metrics(c)))
    report = EvalReport(results, buckets)
    if results:
        report.overall = {m: float(np.mean([r.metrics[m] for r in results])) for m in METRICS}
    for b in buckets:
        rs = [r for r in results if r.bucket == b]
        if rs:
            report.per_bucket[b] = {m: float(np.mean([r.metrics[m] for r in rs])) for m in METRICS}
    return report
