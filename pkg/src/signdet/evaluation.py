"""Greedy detection matching, all-point AP, mAP@0.5 and an FPS harness."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np

from .losses import BBox, iou


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_id: int
    score: float
    image_id: Hashable = 0

    def __post_init__(self):
        object.__setattr__(self, "bbox", BBox.of(self.bbox))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    bbox: BBox
    class_id: int
    image_id: Hashable = 0

    def __post_init__(self):
        object.__setattr__(self, "bbox", BBox.of(self.bbox))


def score_order(dets: Sequence[Detection]) -> list[int]:
    """Indices by descending score; equal scores keep input order."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth],
                     iou_thresh: float = 0.5) -> list[bool]:
    """TP flag for each detection, aligned with the input order.

    Detections are visited by descending score.  Each takes the unmatched
    ground truth of the same class and image with the highest IoU, provided
    that IoU reaches ``iou_thresh``; otherwise it is a false positive.
    """
    if not 0 < iou_thresh < 1:
        raise ValueError("iou_thresh must lie in (0, 1)")
    pools: dict[tuple, list[int]] = {}
    for j, g in enumerate(gts):
        pools.setdefault((g.image_id, g.class_id), []).append(j)
    taken = [False] * len(gts)
    flags = [False] * len(dets)
    for i in score_order(dets):
        d = dets[i]
        best, best_iou = -1, iou_thresh
        for j in pools.get((d.image_id, d.class_id), ()):
            if taken[j]:
                continue
            o = iou(d.bbox, gts[j].bbox)
            if o >= best_iou and (best < 0 or o > best_iou):
                best, best_iou = j, o
        if best >= 0:
            taken[best] = True
            flags[i] = True
    return flags


def pr_curve(flags: Sequence[bool], n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(flags, dtype=bool)
    tp = np.cumsum(f)
    fp = np.cumsum(~f)
    recall = tp / n_gt if n_gt else np.zeros(len(f))
    precision = tp / np.maximum(tp + fp, 1)
    return recall, precision


def average_precision(flags: Sequence[bool], n_gt: int) -> float:
    """Area under the monotone precision envelope (all-point interpolation).

    ``flags`` must already be in descending-score order.
    """
    if n_gt < 0:
        raise ValueError("n_gt must be non-negative")
    if n_gt == 0 or len(flags) == 0:
        return 0.0
    recall, precision = pr_curve(flags, n_gt)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class EvalReport:
    per_class_ap: dict[int, float]
    map50: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    iou_thresh: float = 0.5
    conf_thresh: float = 0.25
    curves: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "iou_thresh": self.iou_thresh,
            "conf_thresh": self.conf_thresh,
            "map50": self.map50,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
        }


def _canonical(dets: Sequence[Detection]) -> list[Detection]:
    # a total order independent of how the caller listed the detections
    return sorted(dets, key=lambda d: (-d.score, str(d.image_id), d.class_id, tuple(d.bbox)))


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thresh: float = 0.5,
             conf_thresh: float = 0.25) -> EvalReport:
    if not gts:
        raise ValueError("no ground truths to evaluate against")
    dets = _canonical(dets)
    flags = match_detections(dets, gts, iou_thresh)  # canonical order is already score order
    n_gt: dict[int, int] = {}
    for g in gts:
        n_gt[g.class_id] = n_gt.get(g.class_id, 0) + 1
    per_class, curves = {}, {}
    for c in sorted(n_gt):
        cls_flags = [f for d, f in zip(dets, flags) if d.class_id == c]
        per_class[c] = average_precision(cls_flags, n_gt[c])
        curves[c] = pr_curve(cls_flags, n_gt[c])
    kept = [f for d, f in zip(dets, flags) if d.score >= conf_thresh]
    tp = int(sum(kept))
    fp = len(kept) - tp
    fn = len(gts) - tp
    return EvalReport(
        per_class_ap=per_class,
        map50=float(np.mean(list(per_class.values()))),
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        tp=tp, fp=fp, fn=fn,
        iou_thresh=iou_thresh, conf_thresh=conf_thresh, curves=curves,
    )


@dataclass(frozen=True)
class BenchResult:
    fps: float
    elapsed: float
    iters: int
    mean_ms: float
    min_ms: float
    max_ms: float


def fps_bench(workload: Callable[[], object], warmup: int = 2, iters: int = 10) -> BenchResult:
    """Time ``iters`` calls of ``workload`` after ``warmup`` untimed ones."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    for _ in range(warmup):
        workload()
    laps = np.empty(iters)
    start = time.perf_counter()
    prev = start
    for i in range(iters):
        workload()
        now = time.perf_counter()
        laps[i] = now - prev
        prev = now
    elapsed = prev - start
    return BenchResult(iters / elapsed, elapsed, iters, 1e3 * laps.mean(), 1e3 * laps.min(), 1e3 * laps.max())
