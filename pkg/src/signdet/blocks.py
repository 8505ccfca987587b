"""Coordinate Attention, BiFPN weighted fusion, ODConv and LSKA as plain functions.

Every block ``foo(x, params)`` has a ``foo_backward(x, params, grad_out)``
that returns the gradient w.r.t. the block input(s), recomputing the forward
pass as needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import (
    ConvSpec,
    activation,
    activation_backward,
    conv2d,
    conv2d_backward,
    directional_pool,
    directional_pool_backward,
    elementwise,
    identity_conv,
    resize_nearest,
    resize_nearest_backward,
    same_padding,
    sigmoid,
    softmax,
    softmax_backward,
)


# --------------------------------------------------------------------------
# Coordinate Attention


@dataclass(frozen=True, eq=False)
class CaParams:
    """Shared 1x1 reduction, inference-mode batch norm, two 1x1 expansions."""

    reduce: ConvSpec
    expand_h: ConvSpec
    expand_w: ConvSpec
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    bn_eps: float = 1e-5
    ratio: int = 1

    def __post_init__(self):
        c = self.reduce.in_channels
        if c % self.ratio:
            raise ValueError(f"channels {c} not divisible by ratio {self.ratio}")
        mid = self.reduce.out_channels
        if self.expand_h.in_channels != mid or self.expand_w.in_channels != mid:
            raise ValueError("expansion convs must consume the reduced channels")
        if self.expand_h.out_channels != c or self.expand_w.out_channels != c:
            raise ValueError("expansion convs must restore the input channels")
        for spec in (self.reduce, self.expand_h, self.expand_w):
            if spec.kernel.shape[2:] != (1, 1):
                raise ValueError("coordinate attention uses 1x1 convolutions")

    @property
    def channels(self) -> int:
        return self.reduce.in_channels

    @property
    def bn_scale(self) -> np.ndarray:
        return self.bn_gamma / np.sqrt(self.bn_var + self.bn_eps)

    @classmethod
    def build(cls, channels: int, ratio: int = 1, rng: np.random.Generator | None = None,
              scale: float = 0.5, dtype=np.float32, bn_eps: float = 1e-5) -> "CaParams":
        """Random weights when ``rng`` is given, all-zero weights otherwise; identity norm."""
        mid = max(channels // ratio, 1)

        def conv(f, c):
            if rng is None:
                return ConvSpec(np.zeros((f, c, 1, 1), dtype), np.zeros(f, dtype))
            return ConvSpec((rng.standard_normal((f, c, 1, 1)) * scale).astype(dtype),
                            (rng.standard_normal(f) * scale).astype(dtype))

        return cls(
            reduce=conv(mid, channels),
            expand_h=conv(channels, mid),
            expand_w=conv(channels, mid),
            bn_gamma=np.ones(mid, dtype), bn_beta=np.zeros(mid, dtype),
            bn_mean=np.zeros(mid, dtype), bn_var=np.ones(mid, dtype),
            bn_eps=bn_eps, ratio=ratio,
        )


def _check_channels(x: np.ndarray, c: int, what: str):
    if x.ndim != 4:
        raise ValueError(f"{what} expects (N, C, H, W), got {x.shape}")
    if x.shape[1] != c:
        raise ValueError(f"{what}: input has C={x.shape[1]} channels, parameters expect {c}")


def _ca_forward(x: np.ndarray, p: CaParams) -> dict:
    _check_channels(x, p.channels, "coordinate_attention")
    h = x.shape[2]
    zh = directional_pool(x, "horizontal")                      # N,C,H,1
    zw = directional_pool(x, "vertical")                        # N,C,1,W
    cat = np.concatenate([zh, zw.transpose(0, 1, 3, 2)], axis=2)  # N,C,H+W,1
    t = conv2d(cat, p.reduce)
    scale = p.bn_scale.astype(t.dtype)[None, :, None, None]
    u = (t - p.bn_mean.astype(t.dtype)[None, :, None, None]) * scale + p.bn_beta.astype(t.dtype)[None, :, None, None]
    f = activation(u, "relu")
    fh = f[:, :, :h]
    fw = f[:, :, h:].transpose(0, 1, 3, 2)
    ah = conv2d(fh, p.expand_h)
    aw = conv2d(fw, p.expand_w)
    return dict(cat=cat, scale=scale, u=u, fh=fh, fw=fw, gh=sigmoid(ah), gw=sigmoid(aw))


def coordinate_attention_maps(x: np.ndarray, p: CaParams) -> tuple[np.ndarray, np.ndarray]:
    """The row gate ``(N, C, H, 1)`` and column gate ``(N, C, 1, W)``."""
    c = _ca_forward(x, p)
    return c["gh"], c["gw"]


def coordinate_attention(x: np.ndarray, p: CaParams) -> np.ndarray:
    c = _ca_forward(x, p)
    return elementwise(elementwise(x, c["gh"], "mul"), c["gw"], "mul")


def coordinate_attention_backward(x: np.ndarray, p: CaParams, grad_out: np.ndarray) -> np.ndarray:
    c = _ca_forward(x, p)
    h = x.shape[2]
    gh, gw = c["gh"], c["gw"]
    gx = grad_out * gh * gw
    d_gh = (grad_out * x * gw).sum(axis=3, keepdims=True)
    d_gw = (grad_out * x * gh).sum(axis=2, keepdims=True)
    d_fh = conv2d_backward(c["fh"], p.expand_h, d_gh * gh * (1 - gh))[0]
    d_fw = conv2d_backward(c["fw"], p.expand_w, d_gw * gw * (1 - gw))[0]
    d_f = np.concatenate([d_fh, d_fw.transpose(0, 1, 3, 2)], axis=2)
    d_t = activation_backward(c["u"], "relu", d_f) * c["scale"]
    d_cat = conv2d_backward(c["cat"], p.reduce, d_t)[0]
    gx = gx + directional_pool_backward(x.shape, "horizontal", d_cat[:, :, :h])
    gx = gx + directional_pool_backward(x.shape, "vertical", d_cat[:, :, h:].transpose(0, 1, 3, 2))
    return gx


# --------------------------------------------------------------------------
# BiFPN


@dataclass(frozen=True, eq=False)
class BifpnNodeParams:
    weights: np.ndarray
    post_conv: ConvSpec
    epsilon: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def uniform(cls, n_inputs: int, channels: int, epsilon: float = 1e-4, dtype=np.float32):
        return cls(np.ones(n_inputs), identity_conv(channels, dtype), epsilon)

    @property
    def rectified(self) -> np.ndarray:
        return np.maximum(self.weights, 0.0)


def _fusion_inputs(inputs: Sequence[np.ndarray], p: BifpnNodeParams):
    if len(inputs) == 0:
        raise ValueError("bifpn_fuse needs at least one input")
    if len(inputs) != len(p.weights):
        raise ValueError(f"{len(inputs)} inputs but {len(p.weights)} fusion weights")
    ref = inputs[0]
    for i, t in enumerate(inputs):
        if t.ndim != 4 or t.shape[:2] != ref.shape[:2]:
            raise ValueError(f"input {i} has shape {t.shape}; N and C must match {ref.shape[:2]}")
    th, tw = ref.shape[2:]
    return [t if t.shape[2:] == (th, tw) else resize_nearest(t, th, tw) for t in inputs]


def _weighted_mean(resized, p: BifpnNodeParams):
    w = p.rectified
    norm = p.epsilon + w.sum()
    acc = np.zeros(resized[0].shape, dtype=np.float64)
    for wi, t in zip(w, resized):
        acc += wi * t
    return (acc / norm).astype(resized[0].dtype), w / norm


def bifpn_fuse(inputs: Sequence[np.ndarray], p: BifpnNodeParams) -> np.ndarray:
    """``post_conv(sum w_i I_i / (eps + sum w_i))`` with ``w = max(omega, 0)``.

    Inputs are resized (nearest) to the extent of the first one.
    """
    fused, _ = _weighted_mean(_fusion_inputs(inputs, p), p)
    return conv2d(fused, p.post_conv)


def bifpn_fuse_backward(inputs: Sequence[np.ndarray], p: BifpnNodeParams,
                        grad_out: np.ndarray) -> list[np.ndarray]:
    fused, coef = _weighted_mean(_fusion_inputs(inputs, p), p)
    g_fused = conv2d_backward(fused, p.post_conv, grad_out)[0]
    th, tw = inputs[0].shape[2:]
    grads = []
    for ci, t in zip(coef, inputs):
        g = (ci * g_fused).astype(g_fused.dtype)
        if t.shape[2:] != (th, tw):
            g = resize_nearest_backward(g, *t.shape[2:])
        grads.append(g)
    return grads


def _check_ladder(p4_in, p5_in, p3_out):
    h, w = p4_in.shape[2:]
    if p5_in.shape[2:] != (h // 2, w // 2) or 2 * p5_in.shape[2] != h or 2 * p5_in.shape[3] != w:
        raise ValueError(f"p5_in extent {p5_in.shape[2:]} must be half of p4_in {p4_in.shape[2:]}")
    if p3_out.shape[2:] != (2 * h, 2 * w):
        raise ValueError(f"p3_out extent {p3_out.shape[2:]} must be double p4_in {p4_in.shape[2:]}")


def bifpn_layer4(p4_in, p5_in, p3_out, td_params: BifpnNodeParams, out_params: BifpnNodeParams):
    """The level-4 top-down node and its bottom-up output node."""
    _check_ladder(p4_in, p5_in, p3_out)
    p4_td = bifpn_fuse([p4_in, p5_in], td_params)
    p4_out = bifpn_fuse([p4_in, p4_td, p3_out], out_params)
    return p4_td, p4_out


def bifpn_layer4_backward(p4_in, p5_in, p3_out, td_params, out_params, grad_td, grad_out):
    """Gradients w.r.t. ``(p4_in, p5_in, p3_out)`` given upstream grads of both outputs."""
    _check_ladder(p4_in, p5_in, p3_out)
    p4_td = bifpn_fuse([p4_in, p5_in], td_params)
    g4, g_td, g3 = bifpn_fuse_backward([p4_in, p4_td, p3_out], out_params, grad_out)
    g4b, g5 = bifpn_fuse_backward([p4_in, p5_in], td_params, grad_td + g_td)
    return g4 + g4b, g5, g3


# --------------------------------------------------------------------------
# ODConv (kernel-wise attention)


@dataclass(frozen=True, eq=False)
class OdconvParams:
    """K candidate kernels and the GAP -> affine -> softmax attention head."""

    kernels: tuple[ConvSpec, ...]
    attn_weight: np.ndarray  # (K, C)
    attn_bias: np.ndarray    # (K,)

    def __post_init__(self):
        ks = tuple(self.kernels)
        object.__setattr__(self, "kernels", ks)
        if not ks:
            raise ValueError("odconv needs at least one kernel (K >= 1)")
        k0 = ks[0]
        for i, k in enumerate(ks):
            if (k.kernel.shape, k.stride, k.pads, k.dilation, k.groups) != (
                    k0.kernel.shape, k0.stride, k0.pads, k0.dilation, k0.groups):
                raise ValueError(f"kernel {i} differs in shape or geometry from kernel 0")
        aw = np.asarray(self.attn_weight, dtype=np.float64)
        ab = np.asarray(self.attn_bias, dtype=np.float64)
        if aw.shape != (len(ks), k0.in_channels) or ab.shape != (len(ks),):
            raise ValueError(f"attention head must be ({len(ks)}, {k0.in_channels}) + ({len(ks)},)")
        object.__setattr__(self, "attn_weight", aw)
        object.__setattr__(self, "attn_bias", ab)

    @classmethod
    def build(cls, channels: int, out_channels: int, n_kernels: int, ksize: int = 3,
              rng: np.random.Generator | None = None, dtype=np.float32) -> "OdconvParams":
        rng = rng or np.random.default_rng(0)
        pad = same_padding(ksize, ksize)
        fan_in = channels * ksize * ksize
        kernels = tuple(
            ConvSpec((rng.standard_normal((out_channels, channels, ksize, ksize)) / np.sqrt(fan_in)).astype(dtype),
                     (rng.standard_normal(out_channels) * 0.1).astype(dtype), padding=pad)
            for _ in range(n_kernels)
        )
        return cls(kernels, rng.standard_normal((n_kernels, channels)), rng.standard_normal(n_kernels) * 0.1)

    def aggregate(self, a: np.ndarray) -> ConvSpec:
        """Kernel ``sum_k a_k W_k`` (and bias) for one attention vector."""
        k0 = self.kernels[0]
        w = sum(ai * k.kernel.astype(np.float64) for ai, k in zip(a, self.kernels))
        b = sum(ai * k.bias.astype(np.float64) for ai, k in zip(a, self.kernels))
        dt = k0.kernel.dtype
        return ConvSpec(w.astype(dt), b.astype(dt), k0.stride, k0.padding, k0.dilation, k0.groups)


def odconv_attention(x: np.ndarray, p: OdconvParams) -> np.ndarray:
    """Per-sample kernel attention ``(N, K)``; rows are softmax distributions."""
    _check_channels(x, p.kernels[0].in_channels, "odconv")
    gap = x.mean(axis=(2, 3), dtype=np.float64)
    return softmax(gap @ p.attn_weight.T + p.attn_bias, axis=1)


def odconv(x: np.ndarray, p: OdconvParams) -> np.ndarray:
    """``y = sum_k a_k(x) * conv_k(x)``."""
    a = odconv_attention(x, p)
    out = None
    for k, spec in enumerate(p.kernels):
        term = a[:, k].astype(x.dtype)[:, None, None, None] * conv2d(x, spec)
        out = term if out is None else out + term
    return out


def odconv_backward(x: np.ndarray, p: OdconvParams, grad_out: np.ndarray) -> np.ndarray:
    a = odconv_attention(x, p)
    gx = np.zeros_like(x)
    d_a = np.empty_like(a)
    for k, spec in enumerate(p.kernels):
        y_k = conv2d(x, spec)
        d_a[:, k] = (grad_out * y_k).sum(axis=(1, 2, 3), dtype=np.float64)
        gx += conv2d_backward(x, spec, a[:, k].astype(x.dtype)[:, None, None, None] * grad_out)[0]
    d_logits = softmax_backward(a, d_a, axis=1)
    d_gap = d_logits @ p.attn_weight
    hw = x.shape[2] * x.shape[3]
    gx += (d_gap / hw).astype(x.dtype)[:, :, None, None]
    return gx


# --------------------------------------------------------------------------
# LSKA


@dataclass(frozen=True, eq=False)
class LskaParams:
    dw_h: ConvSpec
    dw_v: ConvSpec
    dwd_h: ConvSpec
    dwd_v: ConvSpec

    def __post_init__(self):
        for name in ("dw_h", "dw_v", "dwd_h", "dwd_v"):
            spec = getattr(self, name)
            if not spec.is_depthwise:
                raise ValueError(f"{name} must be depthwise (groups == channels, one input channel per group)")
            if spec.stride != 1:
                raise ValueError(f"{name} must use stride 1 to preserve the spatial shape")

    @property
    def channels(self) -> int:
        return self.dw_h.out_channels

    @classmethod
    def build(cls, channels: int, k: int = 7, dilation: int = 3,
              rng: np.random.Generator | None = None, dtype=np.float32) -> "LskaParams":
        rng = rng or np.random.default_rng(0)

        def dw(kh, kw, d):
            w = (rng.standard_normal((channels, 1, kh, kw)) / np.sqrt(kh * kw)).astype(dtype)
            b = (rng.standard_normal(channels) * 0.1).astype(dtype)
            return ConvSpec(w, b, padding=same_padding(kh, kw, d), dilation=d, groups=channels)

        return cls(dw(1, k, 1), dw(k, 1, 1), dw(1, k, dilation), dw(k, 1, dilation))


def _lska_branches(x: np.ndarray, p: LskaParams):
    _check_channels(x, p.channels, "lska")
    ah = conv2d(x, p.dw_h)
    a = conv2d(ah, p.dw_v)
    bh = conv2d(x, p.dwd_h)
    b = conv2d(bh, p.dwd_v)
    if a.shape != x.shape or b.shape != x.shape:
        raise ValueError("lska branch specs must preserve the spatial shape (use same padding)")
    return ah, a, bh, b


def lska(x: np.ndarray, p: LskaParams) -> np.ndarray:
    """Plain cascaded 1-D depthwise branch times its dilated twin."""
    _, a, _, b = _lska_branches(x, p)
    return elementwise(a, b, "mul")


def lska_backward(x: np.ndarray, p: LskaParams, grad_out: np.ndarray) -> np.ndarray:
    ah, a, bh, b = _lska_branches(x, p)
    g_ah = conv2d_backward(ah, p.dw_v, grad_out * b)[0]
    g_bh = conv2d_backward(bh, p.dwd_v, grad_out * a)[0]
    return conv2d_backward(x, p.dw_h, g_ah)[0] + conv2d_backward(x, p.dwd_h, g_bh)[0]
