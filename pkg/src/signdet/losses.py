"""Box geometry and the IoU loss family, with gradients w.r.t. the predicted box.

Boxes are corner form ``(x1, y1, x2, y2)`` in pixels.  Gradients are 4-vectors
ordered the same way.  Where a ``min``/``max`` is tied (coincident edges, most
importantly ``pred == gt``) the derivative is split evenly between the two
arguments, which makes every IoU-family gradient vanish at its minimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

EPS = 1e-9
_V_SCALE = 4.0 / math.pi ** 2


class BBox(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    @classmethod
    def of(cls, b) -> "BBox":
        box = b if isinstance(b, BBox) else cls(*(float(v) for v in b))
        if box.x2 < box.x1 or box.y2 < box.y1:
            raise ValueError(f"invalid box {tuple(box)}: need x2 >= x1 and y2 >= y1")
        return box

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2


@dataclass(frozen=True)
class LossValue:
    value: float
    grad_pred: np.ndarray | float


@dataclass(frozen=True)
class WiouState:
    """Running mean of the IoU loss plus the focusing hyper-parameters.

    ``running_mean_iou_loss`` is ``None`` until :meth:`initial` (or a first
    update) sets it; :func:`wiou_loss` refuses an uninitialised state.
    """

    running_mean_iou_loss: float | None = None
    momentum: float = 0.99
    alpha: float = 1.9
    delta: float = 3.0

    def __post_init__(self):
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        if self.alpha <= 0 or self.delta <= 0:
            raise ValueError("alpha and delta must be positive")
        if self.running_mean_iou_loss is not None and self.running_mean_iou_loss <= 0:
            raise ValueError("running mean IoU loss must be positive")

    @classmethod
    def initial(cls, mean_iou_loss: float = 1.0, **kw) -> "WiouState":
        return cls(running_mean_iou_loss=mean_iou_loss, **kw)

    def updated(self, iou_loss: float) -> "WiouState":
        m = self.momentum * self.running_mean_iou_loss + (1 - self.momentum) * iou_loss
        return replace(self, running_mean_iou_loss=max(m, EPS))


def _dmax(a: float, b: float) -> float:
    """d max(a, b) / da with ties split evenly."""
    return 1.0 if a > b else 0.0 if a < b else 0.5


def _dmin(a: float, b: float) -> float:
    return 1.0 if a < b else 0.0 if a > b else 0.5


def _overlap(p: BBox, g: BBox):
    """Intersection/union areas and their gradients w.r.t. ``p``."""
    ix1, ix2 = max(p.x1, g.x1), min(p.x2, g.x2)
    iy1, iy2 = max(p.y1, g.y1), min(p.y2, g.y2)
    iw_raw, ih_raw = ix2 - ix1, iy2 - iy1
    iw, ih = max(iw_raw, 0.0), max(ih_raw, 0.0)
    diw = _dmax(iw_raw, 0.0)
    dih = _dmax(ih_raw, 0.0)
    d_iw = np.array([-diw * _dmax(p.x1, g.x1), 0.0, diw * _dmin(p.x2, g.x2), 0.0])
    d_ih = np.array([0.0, -dih * _dmax(p.y1, g.y1), 0.0, dih * _dmin(p.y2, g.y2)])
    inter = iw * ih
    d_inter = ih * d_iw + iw * d_ih
    pw, ph = p.width, p.height
    d_area = np.array([-ph, -pw, ph, pw])
    union = p.area + g.area - inter
    d_union = d_area - d_inter
    return inter, d_inter, union, d_union


def _iou_and_grad(p: BBox, g: BBox) -> tuple[float, np.ndarray]:
    inter, d_inter, union, d_union = _overlap(p, g)
    if union <= EPS:
        return inter / EPS, d_inter / EPS
    return inter / union, d_inter / union - inter * d_union / union ** 2


def iou(a, b) -> float:
    """Intersection over union.  Zero-area boxes give 0, even when identical."""
    a, b = BBox.of(a), BBox.of(b)
    iw = max(min(a.x2, b.x2) - max(a.x1, b.x1), 0.0)
    ih = max(min(a.y2, b.y2) - max(a.y1, b.y1), 0.0)
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / max(union, EPS)


def center_distance_sq(a, b) -> float:
    a, b = BBox.of(a), BBox.of(b)
    (ax, ay), (bx, by) = a.center, b.center
    return (ax - bx) ** 2 + (ay - by) ** 2


def enclosing_size(a, b) -> tuple[float, float]:
    a, b = BBox.of(a), BBox.of(b)
    return max(a.x2, b.x2) - min(a.x1, b.x1), max(a.y2, b.y2) - min(a.y1, b.y1)


def enclosing_diag_sq(a, b) -> float:
    cw, ch = enclosing_size(a, b)
    return cw ** 2 + ch ** 2


def aspect_consistency(pred, gt) -> float:
    """CIoU's ``v`` term: squared arctan gap between the two aspect ratios."""
    p, g = BBox.of(pred), BBox.of(gt)
    return _V_SCALE * (math.atan2(g.width, g.height) - math.atan2(p.width, p.height)) ** 2


def _rho2_and_grad(p: BBox, g: BBox):
    (px, py), (gx, gy) = p.center, g.center
    dx, dy = px - gx, py - gy
    return dx * dx + dy * dy, np.array([dx, dy, dx, dy])


def _enclosing_and_grad(p: BBox, g: BBox):
    cw = max(p.x2, g.x2) - min(p.x1, g.x1)
    ch = max(p.y2, g.y2) - min(p.y1, g.y1)
    d_cw = np.array([-_dmin(p.x1, g.x1), 0.0, _dmax(p.x2, g.x2), 0.0])
    d_ch = np.array([0.0, -_dmin(p.y1, g.y1), 0.0, _dmax(p.y2, g.y2)])
    return cw, d_cw, ch, d_ch


def _ratio_grad(num, d_num, den, d_den):
    """Value and gradient of num/den, with den floored at EPS."""
    if den <= EPS:
        return num / EPS, d_num / EPS
    return num / den, d_num / den - num * d_den / den ** 2


def _require_gt(gt: BBox):
    if gt.area <= 0:
        raise ValueError(f"ground-truth box {tuple(gt)} must have positive area")


def ciou_loss(pred, gt) -> LossValue:
    """``1 - IoU + rho^2/c^2 + alpha*v`` with ``alpha`` held constant."""
    p, g = BBox.of(pred), BBox.of(gt)
    _require_gt(g)
    iou_v, d_iou = _iou_and_grad(p, g)
    rho2, d_rho2 = _rho2_and_grad(p, g)
    cw, d_cw, ch, d_ch = _enclosing_and_grad(p, g)
    dist, d_dist = _ratio_grad(rho2, d_rho2, cw * cw + ch * ch, 2 * cw * d_cw + 2 * ch * d_ch)

    w, h = p.width, p.height
    gap = math.atan2(g.width, g.height) - math.atan2(w, h)
    v = _V_SCALE * gap * gap
    r2 = max(w * w + h * h, EPS)
    d_atan = np.array([-h, w, h, -w]) / r2  # d atan2(w, h) / d(x1, y1, x2, y2)
    d_v = -2 * _V_SCALE * gap * d_atan
    den = (1 - iou_v) + v
    alpha = v / den if den > EPS else 0.0

    value = 1 - iou_v + dist + alpha * v
    grad = -d_iou + d_dist + alpha * d_v
    return LossValue(value, grad)


def eiou_loss(pred, gt) -> LossValue:
    """``1 - IoU + rho^2/c^2 + (w-w_gt)^2/c_w^2 + (h-h_gt)^2/c_h^2``."""
    p, g = BBox.of(pred), BBox.of(gt)
    _require_gt(g)
    iou_v, d_iou = _iou_and_grad(p, g)
    rho2, d_rho2 = _rho2_and_grad(p, g)
    cw, d_cw, ch, d_ch = _enclosing_and_grad(p, g)
    dist, d_dist = _ratio_grad(rho2, d_rho2, cw * cw + ch * ch, 2 * cw * d_cw + 2 * ch * d_ch)
    dw, dh = p.width - g.width, p.height - g.height
    pen_w, d_pen_w = _ratio_grad(dw * dw, 2 * dw * np.array([-1.0, 0, 1, 0]), cw * cw, 2 * cw * d_cw)
    pen_h, d_pen_h = _ratio_grad(dh * dh, 2 * dh * np.array([0, -1.0, 0, 1]), ch * ch, 2 * ch * d_ch)
    value = 1 - iou_v + dist + pen_w + pen_h
    return LossValue(value, -d_iou + d_dist + d_pen_w + d_pen_h)


def focusing_coefficient(beta: float, alpha: float, delta: float) -> float:
    """Non-monotonic focusing ``r = beta / (delta * alpha**(beta - delta))``."""
    return beta / (delta * alpha ** (beta - delta))


def wiou_loss(pred, gt, state: WiouState) -> tuple[LossValue, WiouState]:
    """Focused Wise-IoU for one pair; returns the loss and the advanced state.

    The distance attention ``exp(rho^2 / D^2)`` keeps ``D^2`` (enclosing
    diagonal) constant, and the outlierness ``beta`` is constant as well, so
    the gradient flows through ``rho^2`` and the IoU only.
    """
    if state.running_mean_iou_loss is None:
        raise ValueError("WiouState is not initialised; use WiouState.initial()")
    p, g = BBox.of(pred), BBox.of(gt)
    _require_gt(g)
    iou_v, d_iou = _iou_and_grad(p, g)
    l_iou = 1 - iou_v
    rho2, d_rho2 = _rho2_and_grad(p, g)
    diag2 = max(enclosing_diag_sq(p, g), EPS)
    attn = math.exp(rho2 / diag2)
    beta = l_iou / state.running_mean_iou_loss
    r = focusing_coefficient(beta, state.alpha, state.delta)
    value = r * attn * l_iou
    grad = r * attn * (d_rho2 / diag2 * l_iou - d_iou)
    return LossValue(value, grad), state.updated(l_iou)


def wiou_batch(preds: Sequence, gts: Sequence, state: WiouState) -> tuple[list[LossValue], WiouState]:
    """Score a batch against one frozen state, then advance it by the batch-mean IoU loss."""
    if len(preds) != len(gts):
        raise ValueError("preds and gts differ in length")
    losses = [wiou_loss(p, g, state)[0] for p, g in zip(preds, gts)]
    if not losses:
        return losses, state
    mean_l = float(np.mean([1 - iou(p, g) for p, g in zip(preds, gts)]))
    return losses, state.updated(mean_l)


def focal_loss(prob: float, target: int, alpha: float = 0.25, gamma: float = 2.0) -> LossValue:
    """``-alpha_t (1 - p_t)^gamma ln p_t``; gradient is w.r.t. ``prob``."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"prob must lie strictly inside (0, 1), got {prob}; clamp it first")
    if target not in (0, 1):
        raise ValueError("target must be 0 or 1")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    pt = prob if target == 1 else 1.0 - prob
    at = alpha if target == 1 else 1.0 - alpha
    q = 1.0 - pt
    log_pt = math.log(pt)
    value = -at * q ** gamma * log_pt
    d_pt = at * (gamma * q ** (gamma - 1) * log_pt - q ** gamma / pt) if gamma else -at / pt
    return LossValue(value, d_pt if target == 1 else -d_pt)


def bce_with_logits(logit: float, target: int) -> LossValue:
    z = float(logit)
    value = max(z, 0.0) - z * target + math.log1p(math.exp(-abs(z)))
    sig = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    return LossValue(value, sig - target)


def bce(prob: float, target: int) -> float:
    """Plain binary cross-entropy on a probability."""
    return -math.log(prob) if target == 1 else -math.log1p(-prob)
