"""K-means anchor recalibration under the ``1 - IoU`` distance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AnchorSet:
    anchors: np.ndarray          # (k, 2) width/height, sorted by area then width
    mean_best_iou: float
    inertia_history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=np.float64).reshape(-1, 2)
        if not len(a) or np.any(a <= 0):
            raise ValueError("anchors must be a non-empty set of positive (w, h) pairs")
        object.__setattr__(self, "anchors", a)

    def to_text(self, k: int, seed: int, decimals: int = 4) -> str:
        lines = [f"# k={k} seed={seed} mean_best_iou={self.mean_best_iou:.6f}"]
        lines += [f"{w:.{decimals}f} {h:.{decimals}f}" for w, h in self.anchors]
        return "\n".join(lines) + "\n"


def wh_iou(boxes: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """IoU matrix ``(n, k)`` between origin-centred (w, h) boxes."""
    b = boxes[:, None, :]
    c = centroids[None, :, :]
    inter = np.minimum(b[..., 0], c[..., 0]) * np.minimum(b[..., 1], c[..., 1])
    union = b[..., 0] * b[..., 1] + c[..., 0] * c[..., 1] - inter
    return inter / union


def _sort_anchors(a: np.ndarray) -> np.ndarray:
    order = np.lexsort((a[:, 0], a[:, 0] * a[:, 1]))
    return a[order]


def _kmeanspp(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = [data[rng.integers(len(data))]]
    for _ in range(1, k):
        d = 1 - wh_iou(data, np.array(centroids)).max(axis=1)
        d2 = np.clip(d, 0, None) ** 2
        total = d2.sum()
        if total <= 0:
            i = rng.integers(len(data))
        else:
            i = rng.choice(len(data), p=d2 / total)
        centroids.append(data[i])
    return np.array(centroids, dtype=np.float64)


def _validate(boxes, k: int) -> np.ndarray:
    data = np.asarray(boxes, dtype=np.float64).reshape(-1, 2)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(data) < k:
        raise ValueError(f"k={k} exceeds the number of boxes ({len(data)})")
    if np.any(data <= 0) or not np.all(np.isfinite(data)):
        raise ValueError("box widths and heights must be positive and finite")
    return data


def kmeans_anchors(boxes: Sequence[tuple[float, float]], k: int = 9, seed: int = 0,
                   max_iter: int = 300) -> AnchorSet:
    """Cluster box shapes into ``k`` anchors.

    Seeded k-means++ over a canonically sorted copy (so input order does not
    matter), ``1 - IoU`` assignment, per-cluster mean update.  An empty cluster
    is reseeded from the box farthest from its centroid.  Because the mean does
    not minimise the IoU distance, an update that would raise the total
    distance is rejected and the iteration stops there, so the recorded
    inertia never increases.
    """
    data = _validate(boxes, k)
    data = data[np.lexsort((data[:, 1], data[:, 0]))]
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(data, k, rng)

    dist = 1 - wh_iou(data, centroids)
    assign = dist.argmin(axis=1)
    inertia = float(dist[np.arange(len(data)), assign].sum())
    history = [inertia]
    for _ in range(max_iter):
        new = centroids.copy()
        for j in range(k):
            members = data[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        own = dist[np.arange(len(data)), assign]
        for j in range(k):
            if not np.any(assign == j):
                far = int(own.argmax())
                new[j] = data[far]
                own[far] = -1.0
        new_dist = 1 - wh_iou(data, new)
        new_assign = new_dist.argmin(axis=1)
        new_inertia = float(new_dist[np.arange(len(data)), new_assign].sum())
        if new_inertia > inertia:
            break
        stable = np.array_equal(new_assign, assign) and np.array_equal(new, centroids)
        centroids, dist, assign, inertia = new, new_dist, new_assign, new_inertia
        history.append(inertia)
        if stable:
            break

    best = wh_iou(data, centroids).max(axis=1)
    return AnchorSet(_sort_anchors(centroids), float(best.mean()), tuple(history))


def best_of_seeds(boxes, k: int, seeds: Sequence[int], max_iter: int = 300) -> AnchorSet:
    """Highest ``mean_best_iou`` over several seeds."""
    runs = [kmeans_anchors(boxes, k, s, max_iter) for s in seeds]
    return max(runs, key=lambda r: r.mean_best_iou)
