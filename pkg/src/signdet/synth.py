"""Tiny synthetic traffic-sign dataset for smoke runs and tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .augment import LabeledImage
from .io import save_labeled_image

# class id -> RGB fill; shapes: 0 circle, 1 square, 2 triangle
_COLORS = {0: (0.85, 0.1, 0.1), 1: (0.1, 0.3, 0.85), 2: (0.95, 0.8, 0.1)}
_SIZES = [(96, 128), (128, 96), (120, 120), (100, 160), (144, 112)]


def _shape_mask(cls: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx + 0.5) / w
    v = (yy + 0.5) / h
    if cls == 0:
        return (u - 0.5) ** 2 + (v - 0.5) ** 2 <= 0.25
    if cls == 1:
        return np.ones((h, w), dtype=bool)
    return v >= np.abs(u - 0.5) * 2


def synth_image(rng: np.random.Generator, max_objects: int = 3) -> LabeledImage:
    h, w = _SIZES[rng.integers(len(_SIZES))]
    base = rng.uniform(0.2, 0.7, 3)
    ramp = np.linspace(0, 0.2, h)[:, None, None]
    img = np.clip(np.broadcast_to(base, (h, w, 3)) + ramp, 0, 1).astype(np.float32)
    boxes, classes = [], []
    for _ in range(int(rng.integers(1, max_objects + 1))):
        cls = int(rng.integers(0, 3))
        bw = int(rng.integers(12, max(13, w // 3)))
        bh = int(np.clip(round(bw * rng.uniform(0.8, 1.25)), 10, h - 2))
        x0 = int(rng.integers(0, w - bw))
        y0 = int(rng.integers(0, h - bh))
        img[y0:y0 + bh, x0:x0 + bw][_shape_mask(cls, bh, bw)] = _COLORS[cls]
        boxes.append((x0, y0, x0 + bw, y0 + bh))
        classes.append(cls)
    return LabeledImage(img, boxes, classes)


def make_demo_dataset(out_dir: Path, n: int = 20, seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed)
    names = []
    for i in range(n):
        name = f"sign_{i:03d}"
        save_labeled_image(Path(out_dir), name, synth_image(rng))
        names.append(name)
    return names
