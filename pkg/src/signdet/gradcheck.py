"""Finite-difference verification of every hand-written backward pass.

Each checker draws one random non-degenerate input, computes the analytic
gradient and a central-difference gradient, and returns their relative error
(see :func:`signdet.tensor.relative_error`).  Oracle closures rebuild the
losses from the forward-only geometry helpers and freeze the sub-expressions
that the analytic gradient treats as constants.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import blocks as B
from . import losses as L
from .tensor import finite_diff_grad, finite_diff_grad_batched, relative_error

EPS = 1e-3
TOLERANCE = 1e-3
# edges closer than this sit on a min/max kink inside the difference stencil
KINK_MARGIN = 0.05
RELU_MARGIN = 0.02
BLOCK_SHAPE = (1, 4, 8, 8)


@dataclass
class GradResult:
    name: str
    trials: int
    max_rel_error: float
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _is_clear_of_kinks(p: L.BBox, g: L.BBox) -> bool:
    gaps = [p.x1 - g.x1, p.x2 - g.x2, p.x2 - g.x1, p.x1 - g.x2,
            p.y1 - g.y1, p.y2 - g.y2, p.y2 - g.y1, p.y1 - g.y2]
    return min(abs(v) for v in gaps) > KINK_MARGIN


def random_box_pair(rng: np.random.Generator) -> tuple[L.BBox, L.BBox]:
    """Overlapping-ish pred/gt pair away from every min/max tie."""
    while True:
        gx, gy = rng.uniform(0, 100, 2)
        gw, gh = rng.uniform(5, 60, 2)
        g = L.BBox(gx, gy, gx + gw, gy + gh)
        cx = gx + gw / 2 + rng.normal(0, 0.4 * gw)
        cy = gy + gh / 2 + rng.normal(0, 0.4 * gh)
        pw = gw * np.exp(rng.normal(0, 0.4))
        ph = gh * np.exp(rng.normal(0, 0.4))
        p = L.BBox(cx - pw / 2, cy - ph / 2, cx + pw / 2, cy + ph / 2)
        if pw > 1 and ph > 1 and _is_clear_of_kinks(p, g):
            return p, g


# --- losses ------------------------------------------------------------------


def check_ciou(rng) -> float:
    p, g = random_box_pair(rng)
    v0 = L.aspect_consistency(p, g)
    alpha = v0 / ((1 - L.iou(p, g)) + v0)

    def f(b):
        b = L.BBox(*b)
        return (1 - L.iou(b, g) + L.center_distance_sq(b, g) / L.enclosing_diag_sq(b, g)
                + alpha * L.aspect_consistency(b, g))

    return relative_error(L.ciou_loss(p, g).grad_pred, finite_diff_grad(f, np.array(p), EPS))


def check_eiou(rng) -> float:
    p, g = random_box_pair(rng)

    def f(b):
        b = L.BBox(*b)
        cw, ch = L.enclosing_size(b, g)
        return (1 - L.iou(b, g) + L.center_distance_sq(b, g) / (cw ** 2 + ch ** 2)
                + (b.width - g.width) ** 2 / cw ** 2 + (b.height - g.height) ** 2 / ch ** 2)

    return relative_error(L.eiou_loss(p, g).grad_pred, finite_diff_grad(f, np.array(p), EPS))


def check_wiou(rng) -> float:
    p, g = random_box_pair(rng)
    state = L.WiouState.initial(rng.uniform(0.2, 1.0))
    diag2 = L.enclosing_diag_sq(p, g)
    beta = (1 - L.iou(p, g)) / state.running_mean_iou_loss
    r = L.focusing_coefficient(beta, state.alpha, state.delta)

    def f(b):
        b = L.BBox(*b)
        return r * np.exp(L.center_distance_sq(b, g) / diag2) * (1 - L.iou(b, g))

    loss, _ = L.wiou_loss(p, g, state)
    return relative_error(loss.grad_pred, finite_diff_grad(f, np.array(p), EPS))


def check_focal(rng) -> float:
    prob = rng.uniform(0.05, 0.95)
    target = int(rng.integers(0, 2))
    alpha = rng.uniform(0.1, 0.9)
    gamma = rng.uniform(0.0, 3.0)
    num = finite_diff_grad(lambda q: L.focal_loss(q[0], target, alpha, gamma).value, [prob], EPS)
    return relative_error(L.focal_loss(prob, target, alpha, gamma).grad_pred, num)


def check_bce(rng) -> float:
    z = rng.uniform(-6, 6)
    t = int(rng.integers(0, 2))
    num = finite_diff_grad(lambda q: L.bce_with_logits(q[0], t).value, [z], EPS)
    return relative_error(L.bce_with_logits(z, t).grad_pred, num)


# --- blocks ------------------------------------------------------------------


def _stacked(fn, shape, upstream):
    """Batch wrapper: scalar ``sum(upstream * fn(x))`` for every stacked copy."""
    def f_batch(stack):
        out = fn(stack.reshape((-1,) + shape[1:]))
        return (out * upstream).reshape(len(stack), -1).sum(axis=1)
    return f_batch


def check_coordinate_attention(rng) -> float:
    while True:
        x = rng.standard_normal(BLOCK_SHAPE)
        p = B.CaParams.build(BLOCK_SHAPE[1], ratio=2, rng=rng, dtype=np.float64)
        pre = B._ca_forward(x, p)["u"]
        if np.abs(pre).min() > RELU_MARGIN:
            break
    up = rng.standard_normal(BLOCK_SHAPE)
    num = finite_diff_grad_batched(_stacked(lambda z: B.coordinate_attention(z, p), BLOCK_SHAPE, up), x, EPS)
    return relative_error(B.coordinate_attention_backward(x, p, up), num)


def check_bifpn(rng) -> float:
    n, c, h, w = BLOCK_SHAPE
    # reference 6x6: one input is upsampled, the other downsampled by a non-integer factor
    inputs = [rng.standard_normal((n, c, 6, 6)),
              rng.standard_normal((n, c, 3, 3)),
              rng.standard_normal((n, c, h, w))]
    kernel = rng.standard_normal((c, c, 3, 3)) / 3
    p = B.BifpnNodeParams(rng.uniform(-0.2, 2.0, 3), B.ConvSpec(kernel, rng.standard_normal(c), padding=1))
    up = rng.standard_normal((n, c, 6, 6))
    analytic = B.bifpn_fuse_backward(inputs, p, up)
    worst = 0.0
    for i, t in enumerate(inputs):
        def fn(z, i=i):
            reps = len(z)
            args = [np.broadcast_to(a, (reps,) + a.shape[1:]) for a in inputs]
            args[i] = z
            return B.bifpn_fuse(args, p)
        num = finite_diff_grad_batched(_stacked(fn, t.shape, up), t, EPS)
        worst = max(worst, relative_error(analytic[i], num))
    return worst


def check_odconv(rng) -> float:
    x = rng.standard_normal(BLOCK_SHAPE)
    p = B.OdconvParams.build(BLOCK_SHAPE[1], BLOCK_SHAPE[1], n_kernels=int(rng.integers(2, 5)),
                             rng=rng, dtype=np.float64)
    up = rng.standard_normal(BLOCK_SHAPE)
    num = finite_diff_grad_batched(_stacked(lambda z: B.odconv(z, p), BLOCK_SHAPE, up), x, EPS)
    return relative_error(B.odconv_backward(x, p, up), num)


def check_lska(rng) -> float:
    x = rng.standard_normal(BLOCK_SHAPE)
    p = B.LskaParams.build(BLOCK_SHAPE[1], rng=rng, dtype=np.float64)
    up = rng.standard_normal(BLOCK_SHAPE)
    num = finite_diff_grad_batched(_stacked(lambda z: B.lska(z, p), BLOCK_SHAPE, up), x, EPS)
    return relative_error(B.lska_backward(x, p, up), num)


CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "ciou_loss": check_ciou,
    "eiou_loss": check_eiou,
    "wiou_loss": check_wiou,
    "focal_loss": check_focal,
    "bce_with_logits": check_bce,
    "coordinate_attention": check_coordinate_attention,
    "bifpn_fuse": check_bifpn,
    "odconv": check_odconv,
    "lska": check_lska,
}


def run_check(name: str, trials: int = 100, seed: int = 0) -> GradResult:
    rng = np.random.default_rng([seed, list(CHECKS).index(name)])
    check = CHECKS[name]
    t0 = time.perf_counter()
    worst = max(check(rng) for _ in range(trials))
    return GradResult(name, trials, worst, time.perf_counter() - t0)


def run_suite(trials: int = 100, seed: int = 0) -> list[GradResult]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return [run_check(name, trials, seed) for name in CHECKS]
