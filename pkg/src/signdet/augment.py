"""Mosaic, MixUp, photometric jitter, Gaussian noise and letterboxing.

Images are ``(H, W, C)`` float32 arrays in ``[0, 1]``; boxes are ``(M, 4)``
corner-form pixel arrays where pixel ``i`` spans ``[i, i + 1)``.  All
randomness comes from an explicit ``numpy.random.Generator``; per-image
generators are derived with :func:`image_rng` so a batch can be processed in
any order (or in parallel) and still reproduce bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .losses import BBox
from .tensor import nearest_indices

Range = tuple[float, float]


@dataclass(frozen=True)
class AugmentConfig:
    scale_range: Range = (0.8, 1.2)
    rotation_deg: Range = (-15.0, 15.0)
    mixup_range: Range = (0.2, 0.4)
    target_size: int = 640
    noise_sigma: Range = (0.01, 0.05)
    brightness_range: Range = (0.6, 1.4)
    contrast_range: Range = (0.6, 1.4)
    saturation_range: Range = (0.6, 1.4)
    min_visible_frac: float = 0.25
    pad_value: float = 114 / 255
    # mosaic split point, as a fraction of target_size on the 2x canvas
    mosaic_center_range: Range = (0.5, 1.5)
    mixup_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.endswith(("_range", "_deg", "_sigma")):
                lo, hi = (float(x) for x in v)
                object.__setattr__(self, f.name, (lo, hi))
                if lo > hi:
                    raise ValueError(f"{f.name}: low {lo} exceeds high {hi}")
        if self.target_size < 1:
            raise ValueError("target_size must be positive")
        if not 0 < self.min_visible_frac <= 1:
            raise ValueError("min_visible_frac must lie in (0, 1]")
        if not 0 <= self.pad_value <= 1:
            raise ValueError("pad_value must lie in [0, 1]")
        if self.noise_sigma[0] < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.scale_range[0] <= 0:
            raise ValueError("scale_range must be positive")
        if not 0 <= self.mixup_prob <= 1:
            raise ValueError("mixup_prob must lie in [0, 1]")


@dataclass
class LabeledImage:
    image: np.ndarray
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    weights: np.ndarray | None = None

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        if img.ndim == 2:
            img = img[:, :, None]
        if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
            raise ValueError(f"image must be (H, W, C), got {img.shape}")
        self.image = img
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if len(self.boxes) != len(self.classes):
            raise ValueError(f"{len(self.boxes)} boxes but {len(self.classes)} classes")
        if self.weights is None:
            self.weights = np.ones(len(self.boxes))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(self.weights) != len(self.boxes):
            raise ValueError("weights must align with boxes")
        h, w = self.height, self.width
        b = self.boxes
        if len(b) and not (np.all(b[:, 0] >= 0) and np.all(b[:, 1] >= 0) and np.all(b[:, 2] <= w)
                           and np.all(b[:, 3] <= h) and np.all(b[:, 2] >= b[:, 0])
                           and np.all(b[:, 3] >= b[:, 1])):
            raise ValueError(f"boxes must satisfy 0 <= x1 <= x2 <= {w} and 0 <= y1 <= y2 <= {h}")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def tobytes(self) -> bytes:
        return b"".join(a.tobytes() for a in (self.image, self.boxes, self.classes, self.weights))


def image_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for image ``index``: PCG64 seeded by ``SeedSequence([seed, index])``."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


# --- geometry ----------------------------------------------------------------


def _transform_boxes(boxes: np.ndarray, affine: np.ndarray, canvas_w: float, canvas_h: float,
                     min_visible_frac: float) -> tuple[np.ndarray, np.ndarray]:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    a = np.asarray(affine, dtype=np.float64)
    if a.shape != (2, 3):
        raise ValueError(f"affine must be 2x3, got {a.shape}")
    if abs(np.linalg.det(a[:, :2])) < 1e-12:
        raise ValueError("affine linear part is singular")
    if not len(boxes):
        return np.zeros((0, 4)), np.zeros(0, dtype=bool)
    x1, y1, x2, y2 = boxes.T
    corners = np.stack([np.stack([x1, y1], -1), np.stack([x2, y1], -1),
                        np.stack([x2, y2], -1), np.stack([x1, y2], -1)], axis=1)  # M,4,2
    moved = corners @ a[:, :2].T + a[:, 2]
    hull = np.concatenate([moved.min(axis=1), moved.max(axis=1)], axis=1)
    clipped = hull.copy()
    clipped[:, [0, 2]] = np.clip(hull[:, [0, 2]], 0, canvas_w)
    clipped[:, [1, 3]] = np.clip(hull[:, [1, 3]], 0, canvas_h)
    hull_area = (hull[:, 2] - hull[:, 0]) * (hull[:, 3] - hull[:, 1])
    clip_area = (clipped[:, 2] - clipped[:, 0]) * (clipped[:, 3] - clipped[:, 1])
    inside = np.all(hull == clipped, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(hull_area > 0, clip_area / np.where(hull_area > 0, hull_area, 1), inside * 1.0)
    return clipped, frac >= min_visible_frac


def transform_boxes(boxes: Sequence, affine, canvas_w: float, canvas_h: float,
                    min_visible_frac: float = 0.25) -> list[tuple[BBox, bool]]:
    """Map boxes through a 2x3 affine.

    Each result is the axis-aligned hull of the four moved corners, clipped to
    the canvas, paired with a kept-flag: a box is dropped when less than
    ``min_visible_frac`` of its hull area survives the clip.
    """
    out, kept = _transform_boxes(np.asarray(boxes, dtype=np.float64), affine, canvas_w, canvas_h,
                                 min_visible_frac)
    return [(BBox(*b), bool(k)) for b, k in zip(out, kept)]


def _resize_image(img: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    if (new_h, new_w) == img.shape[:2]:
        return img.copy()
    ih = nearest_indices(img.shape[0], new_h)
    iw = nearest_indices(img.shape[1], new_w)
    return img[ih[:, None], iw[None, :]]


def _warp_region(canvas: np.ndarray, src: np.ndarray, affine: np.ndarray, region: tuple[int, int, int, int]):
    """Nearest-neighbour inverse warp of ``src`` into ``canvas[y0:y1, x0:x1]``."""
    x0, y0, x1, y1 = region
    if x1 <= x0 or y1 <= y0:
        return
    lin_inv = np.linalg.inv(affine[:, :2])
    u = np.arange(x0, x1, dtype=np.float64) + 0.5
    v = np.arange(y0, y1, dtype=np.float64) + 0.5
    du = u - affine[0, 2]
    dv = v - affine[1, 2]
    sx = lin_inv[0, 0] * du[None, :] + lin_inv[0, 1] * dv[:, None]
    sy = lin_inv[1, 0] * du[None, :] + lin_inv[1, 1] * dv[:, None]
    ix = np.floor(sx).astype(np.int64)
    iy = np.floor(sy).astype(np.int64)
    h, w = src.shape[:2]
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    block = canvas[y0:y1, x0:x1]
    block[ok] = src[iy[ok], ix[ok]]


def tile_affine(tile_w: int, tile_h: int, quadrant: int, center: tuple[float, float],
                target: int, scale: float, angle_deg: float) -> np.ndarray:
    """Affine placing a tile so its scaled footprint touches the mosaic centre.

    The tile is first resized so its long side equals ``target``, then scaled
    by ``scale`` and rotated by ``angle_deg`` about its own centre.  Quadrants
    are 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    """
    base = target / max(tile_w, tile_h)
    k = scale * base
    fw, fh = k * tile_w, k * tile_h
    xc, yc = center
    sx = -1 if quadrant in (0, 2) else 1
    sy = -1 if quadrant in (0, 1) else 1
    fc = np.array([xc + sx * fw / 2, yc + sy * fh / 2])
    t = math.radians(angle_deg)
    lin = k * np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    tc = np.array([tile_w / 2, tile_h / 2])
    return np.hstack([lin, (fc - lin @ tc)[:, None]])


def _quadrant_region(q: int, xc: int, yc: int, size: int) -> tuple[int, int, int, int]:
    return ((0, 0, xc, yc), (xc, 0, size, yc), (0, yc, xc, size), (xc, yc, size, size))[q]


def mosaic(tiles: Sequence[LabeledImage], cfg: AugmentConfig, rng: np.random.Generator) -> LabeledImage:
    """Stitch four tiles on a ``2T x 2T`` canvas around a jittered centre, then letterbox to ``T``."""
    if len(tiles) < 4:
        raise ValueError(f"mosaic needs 4 tiles, got {len(tiles)}")
    tiles = list(tiles)[:4]
    t = cfg.target_size
    size = 2 * t
    channels = tiles[0].image.shape[2]
    if any(tile.image.shape[2] != channels for tile in tiles):
        raise ValueError("mosaic tiles must share a channel count")
    xc = int(np.clip(round(rng.uniform(*cfg.mosaic_center_range) * t), 1, size - 1))
    yc = int(np.clip(round(rng.uniform(*cfg.mosaic_center_range) * t), 1, size - 1))
    canvas = np.full((size, size, channels), cfg.pad_value, dtype=np.float32)
    boxes, classes, weights = [], [], []
    for q, tile in enumerate(tiles):
        scale = rng.uniform(*cfg.scale_range)
        angle = rng.uniform(*cfg.rotation_deg)
        aff = tile_affine(tile.width, tile.height, q, (xc, yc), t, scale, angle)
        region = _quadrant_region(q, xc, yc, size)
        _warp_region(canvas, tile.image, aff, region)
        x0, y0, x1, y1 = region
        local = aff.copy()
        local[:, 2] -= (x0, y0)
        out, kept = _transform_boxes(tile.boxes, local, x1 - x0, y1 - y0, cfg.min_visible_frac)
        out[:, [0, 2]] += x0
        out[:, [1, 3]] += y0
        boxes.append(out[kept])
        classes.append(tile.classes[kept])
        weights.append(tile.weights[kept])
    stitched = LabeledImage(canvas, np.concatenate(boxes), np.concatenate(classes), np.concatenate(weights))
    return letterbox(stitched, t, cfg.pad_value)


def letterbox_params(height: int, width: int, target: int) -> tuple[float, int, int, int, int]:
    """``(scale, new_w, new_h, pad_x, pad_y)`` for an aspect-preserving fit."""
    if target < 1:
        raise ValueError(f"letterbox target must be positive, got {target}")
    if height < 1 or width < 1:
        raise ValueError("image dimensions must be positive")
    s = min(target / width, target / height)
    new_w = min(max(int(round(width * s)), 1), target)
    new_h = min(max(int(round(height * s)), 1), target)
    return s, new_w, new_h, (target - new_w) // 2, (target - new_h) // 2


def letterbox(src: LabeledImage, target: int, pad_value: float = 114 / 255) -> LabeledImage:
    s, new_w, new_h, pad_x, pad_y = letterbox_params(src.height, src.width, target)
    out = np.full((target, target, src.image.shape[2]), pad_value, dtype=np.float32)
    out[pad_y:pad_y + new_h, pad_x:pad_x + new_w] = _resize_image(src.image, new_h, new_w)
    boxes = src.boxes * s + np.array([pad_x, pad_y, pad_x, pad_y], dtype=np.float64)
    boxes = np.clip(boxes, 0, target)
    return LabeledImage(out, boxes, src.classes.copy(), src.weights.copy())


def unletterbox_boxes(boxes: np.ndarray, height: int, width: int, target: int) -> np.ndarray:
    """Map letterboxed boxes back to the original ``height x width`` frame."""
    s, _, _, pad_x, pad_y = letterbox_params(height, width, target)
    return (np.asarray(boxes, dtype=np.float64) - np.array([pad_x, pad_y, pad_x, pad_y])) / s


# --- photometric -------------------------------------------------------------


def mixup(a: LabeledImage, b: LabeledImage, cfg: AugmentConfig, rng: np.random.Generator,
          lam: float | None = None) -> LabeledImage:
    """Convex blend ``lam * a + (1 - lam) * b``; the box lists are unioned with per-source weights."""
    if a.image.shape != b.image.shape:
        raise ValueError(f"mixup needs equal image shapes, got {a.image.shape} and {b.image.shape}")
    if lam is None:
        lam = rng.uniform(*cfg.mixup_range)
    if not 0 <= lam <= 1:
        raise ValueError("mixup factor must lie in [0, 1]")
    img = (lam * a.image.astype(np.float64) + (1 - lam) * b.image.astype(np.float64)).astype(np.float32)
    return LabeledImage(
        np.clip(img, 0, 1),
        np.concatenate([a.boxes, b.boxes]),
        np.concatenate([a.classes, b.classes]),
        np.concatenate([lam * a.weights, (1 - lam) * b.weights]),
    )


def photometric(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator,
                gains: tuple[float, float, float] | None = None) -> np.ndarray:
    """Brightness, then contrast about the global mean, then saturation against the channel mean."""
    if gains is None:
        gains = (rng.uniform(*cfg.brightness_range), rng.uniform(*cfg.contrast_range),
                 rng.uniform(*cfg.saturation_range))
    bright, contrast, sat = gains
    x = np.asarray(img, dtype=np.float64) * bright
    mean = x.mean()
    x = (x - mean) * contrast + mean
    gray = x.mean(axis=2, keepdims=True)
    x = gray + (x - gray) * sat
    return np.clip(x, 0, 1).astype(np.float32)


def gaussian_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    img = np.asarray(img, dtype=np.float32)
    if sigma == 0:
        return img.copy()
    noisy = img.astype(np.float64) + rng.standard_normal(img.shape) * sigma
    return np.clip(noisy, 0, 1).astype(np.float32)


# --- pipeline ----------------------------------------------------------------


def _jittered_mosaic(dataset: Sequence[LabeledImage], first: int | None, cfg, rng) -> LabeledImage:
    n = len(dataset)
    picks = list(rng.integers(0, n, 4 if first is None else 3))
    idx = picks if first is None else [first] + picks
    tiles = []
    for i in idx:
        t = dataset[int(i)]
        tiles.append(LabeledImage(photometric(t.image, cfg, rng), t.boxes, t.classes, t.weights))
    return mosaic(tiles, cfg, rng)


def augment_sample(dataset: Sequence[LabeledImage], index: int, cfg: AugmentConfig,
                   seed: int | None = None, stream: int | None = None) -> LabeledImage:
    """Full training-style sample for ``dataset[index]``.

    Photometric jitter per tile, Mosaic (the indexed image plus three random
    tiles), MixUp with a second mosaic with probability ``mixup_prob``, and
    finally Gaussian noise.  The random stream defaults to ``index``; pass
    ``stream`` to draw several samples for the same base image.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = image_rng(cfg.seed if seed is None else seed, index if stream is None else stream)
    out = _jittered_mosaic(dataset, index, cfg, rng)
    if rng.random() < cfg.mixup_prob:
        out = mixup(out, _jittered_mosaic(dataset, None, cfg, rng), cfg, rng)
    sigma = rng.uniform(*cfg.noise_sigma)
    return LabeledImage(gaussian_noise(out.image, sigma, rng), out.boxes, out.classes, out.weights)
