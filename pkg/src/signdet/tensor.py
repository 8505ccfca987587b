"""Small dense-tensor kernel used by the detection blocks.

Tensors are plain ``numpy.ndarray`` objects.  Feature maps are laid out as
``(N, C, H, W)``; raw images as ``(H, W, C)``.  Every op preserves the
floating dtype of its inputs, so the library default (float32, see
:func:`as_tensor`) and the float64 used by the gradient oracle share one code
path.  Reductions accumulate in float64.

Each differentiable op has a ``*_backward`` companion that maps an upstream
gradient to input gradients.  There is no autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


def as_tensor(data, dtype=DEFAULT_DTYPE) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected an int or a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass(frozen=True, eq=False)
class ConvSpec:
    """Kernel ``(F, C/groups, kh, kw)`` plus bias and geometry.

    ``padding`` may be a single int or an ``(ph, pw)`` pair; the pair form is
    what lets a 1xk kernel keep the height untouched.
    """

    kernel: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int | tuple[int, int] = 0
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        k = np.asarray(self.kernel)
        if k.ndim != 4:
            raise ValueError(f"kernel must be 4-D (F, C/groups, kh, kw), got shape {k.shape}")
        object.__setattr__(self, "kernel", k)
        f = k.shape[0]
        b = np.zeros(f, dtype=k.dtype) if self.bias is None else np.asarray(self.bias)
        if b.shape != (f,):
            raise ValueError(f"bias length {b.shape} does not match filter count F={f}")
        object.__setattr__(self, "bias", b)
        if self.stride < 1 or self.dilation < 1 or self.groups < 1:
            raise ValueError("stride, dilation and groups must be positive")
        ph, pw = _pair(self.padding)
        if ph < 0 or pw < 0:
            raise ValueError("padding must be non-negative")
        if f % self.groups:
            raise ValueError(f"filter count F={f} not divisible by groups={self.groups}")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1] * self.groups

    @property
    def pads(self) -> tuple[int, int]:
        return _pair(self.padding)

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.out_channels and self.kernel.shape[1] == 1

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel.shape[2:]
        ph, pw = self.pads
        d, s = self.dilation, self.stride
        ho = (h + 2 * ph - d * (kh - 1) - 1) // s + 1
        wo = (w + 2 * pw - d * (kw - 1) - 1) // s + 1
        return ho, wo


def same_padding(kh: int, kw: int, dilation: int = 1) -> tuple[int, int]:
    """Padding that keeps the spatial extent for odd kernels at stride 1."""
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("same padding needs odd kernel extents")
    return dilation * (kh - 1) // 2, dilation * (kw - 1) // 2


def identity_conv(channels: int, dtype=DEFAULT_DTYPE) -> ConvSpec:
    """1x1 convolution that returns its input unchanged."""
    k = np.zeros((channels, channels, 1, 1), dtype=dtype)
    k[np.arange(channels), np.arange(channels)] = 1
    return ConvSpec(k)


def _check_conv(x: np.ndarray, spec: ConvSpec) -> tuple[int, int]:
    if x.ndim != 4:
        raise ValueError(f"conv2d expects (N, C, H, W), got shape {x.shape}")
    c = x.shape[1]
    if c != spec.in_channels:
        raise ValueError(
            f"channel dimension C={c} does not match kernel input channels "
            f"{spec.in_channels} (C/groups={spec.kernel.shape[1]}, groups={spec.groups})"
        )
    ho, wo = spec.output_hw(x.shape[2], x.shape[3])
    if ho < 1 or wo < 1:
        raise ValueError(f"convolution output would be empty ({ho}x{wo}) for input {x.shape[2:]}")
    return ho, wo


def _taps(spec: ConvSpec, ho: int, wo: int):
    kh, kw = spec.kernel.shape[2:]
    d, s = spec.dilation, spec.stride
    for u in range(kh):
        for v in range(kw):
            rows = slice(u * d, u * d + s * (ho - 1) + 1, s)
            cols = slice(v * d, v * d + s * (wo - 1) + 1, s)
            yield u, v, rows, cols


def conv2d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Grouped, dilated, strided cross-correlation with bias."""
    ho, wo = _check_conv(x, spec)
    n, c = x.shape[:2]
    g = spec.groups
    f = spec.out_channels
    cg, fg = c // g, f // g
    ph, pw = spec.pads
    dtype = np.result_type(x.dtype, spec.kernel.dtype)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))).astype(dtype, copy=False)
    wk = spec.kernel.astype(dtype, copy=False).reshape(g, fg, cg, *spec.kernel.shape[2:])
    out = np.zeros((n, g, fg, ho, wo), dtype=dtype)
    depthwise = cg == 1 and fg == 1
    for u, v, rows, cols in _taps(spec, ho, wo):
        patch = xp[:, :, rows, cols]
        if depthwise:
            out[:, :, 0] += patch * wk[:, 0, 0, u, v][None, :, None, None]
        else:
            out += np.einsum("ngchw,gfc->ngfhw", patch.reshape(n, g, cg, ho, wo), wk[..., u, v])
    out = out.reshape(n, f, ho, wo)
    out += spec.bias.astype(dtype, copy=False)[None, :, None, None]
    return out


def conv2d_backward(x: np.ndarray, spec: ConvSpec, grad_out: np.ndarray):
    """Return ``(grad_x, grad_kernel, grad_bias)`` for :func:`conv2d`."""
    ho, wo = _check_conv(x, spec)
    if grad_out.shape != (x.shape[0], spec.out_channels, ho, wo):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match conv output")
    n, c, h, w = x.shape
    g = spec.groups
    f = spec.out_channels
    cg, fg = c // g, f // g
    ph, pw = spec.pads
    dtype = np.result_type(x.dtype, spec.kernel.dtype, grad_out.dtype)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))).astype(dtype, copy=False)
    wk = spec.kernel.astype(dtype, copy=False).reshape(g, fg, cg, *spec.kernel.shape[2:])
    go = grad_out.astype(dtype, copy=False).reshape(n, g, fg, ho, wo)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(wk)
    for u, v, rows, cols in _taps(spec, ho, wo):
        patch = xp[:, :, rows, cols].reshape(n, g, cg, ho, wo)
        gxp[:, :, rows, cols] += np.einsum("ngfhw,gfc->ngchw", go, wk[..., u, v]).reshape(n, c, ho, wo)
        gw[..., u, v] = np.einsum("ngfhw,ngchw->gfc", go, patch)
    gx = gxp[:, :, ph:ph + h, pw:pw + w]
    gb = grad_out.sum(axis=(0, 2, 3), dtype=np.float64).astype(dtype)
    return gx, gw.reshape(spec.kernel.shape), gb


_AXES = {"horizontal": 3, "vertical": 2}


def directional_pool(x: np.ndarray, axis: str) -> np.ndarray:
    """Mean along one spatial axis.

    ``horizontal`` averages each row over the width, giving ``(N, C, H, 1)``;
    ``vertical`` averages each column over the height, giving ``(N, C, 1, W)``.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"directional_pool needs a non-empty (N, C, H, W) tensor, got {x.shape}")
    return x.mean(axis=_AXES[axis], keepdims=True, dtype=np.float64).astype(x.dtype)


def directional_pool_backward(shape: Sequence[int], axis: str, grad: np.ndarray) -> np.ndarray:
    ax = _AXES[axis]
    return np.broadcast_to(grad / shape[ax], tuple(shape)).copy()


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    """Source index for each output cell, center aligned.

    Output cell ``d`` (center ``d + 0.5`` in output units) lands on source
    coordinate ``(d + 0.5) * n_in / n_out``; the source cell whose center is
    closest wins, ties going to the lower index.  Integer arithmetic only.
    """
    d = np.arange(n_out, dtype=np.int64)
    num = (2 * d + 1) * n_in - 2 * n_out
    den = 2 * n_out
    idx = -((-num) // den)  # ceil division
    return np.clip(idx, 0, n_in - 1)


def resize_nearest(x: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    if target_h < 1 or target_w < 1:
        raise ValueError(f"resize target must be positive, got {target_h}x{target_w}")
    ih = nearest_indices(x.shape[-2], target_h)
    iw = nearest_indices(x.shape[-1], target_w)
    return x[..., ih[:, None], iw[None, :]]


def resize_nearest_backward(grad: np.ndarray, src_h: int, src_w: int) -> np.ndarray:
    """Scatter-add the gradient of :func:`resize_nearest` back to the source grid."""
    th, tw = grad.shape[-2:]
    ih = nearest_indices(src_h, th)
    iw = nearest_indices(src_w, tw)
    out = np.zeros(grad.shape[:-2] + (src_h, src_w), dtype=grad.dtype)
    # collapse rows, then columns; np.add.at handles repeated indices
    rows = np.zeros(grad.shape[:-2] + (src_h, tw), dtype=grad.dtype)
    np.add.at(rows, (..., ih, slice(None)), grad)
    np.add.at(out, (..., slice(None), iw), rows)
    return out


def sigmoid(x):
    """Logistic function, kept strictly inside (0, 1) even where it saturates."""
    x = np.asarray(x)
    dt = np.result_type(x, np.float32)
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(dt)
    # far tails round to 0 or 1; pull them back by at most one ulp
    return np.clip(s, np.finfo(dt).tiny, np.nextafter(dt.type(1), dt.type(0)))


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(x: np.ndarray, kind: str, grad: np.ndarray) -> np.ndarray:
    if kind == "sigmoid":
        s = sigmoid(x)
        return grad * s * (1 - s)
    if kind == "relu":
        return grad * (x > 0)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(v, axis: int = -1) -> np.ndarray:
    """Shift-stabilised softmax; 1-D input gives a 1-D probability vector."""
    a = np.asarray(v, dtype=np.float64)
    if a.size == 0 or a.shape[axis] == 0:
        raise ValueError("softmax of an empty sequence")
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, grad: np.ndarray, axis: int = -1) -> np.ndarray:
    return probs * (grad - (grad * probs).sum(axis=axis, keepdims=True))


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """``add`` or ``mul`` with broadcasting along singleton axes only."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != b.ndim or any(p != q and 1 not in (p, q) for p, q in zip(a.shape, b.shape)):
        raise ValueError(f"shapes {a.shape} and {b.shape} are not compatible")
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown op {op!r}")


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function, in float64."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = float(f(x))
        flat[i] = old - eps
        fm = float(f(x))
        flat[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Largest absolute deviation, scaled by the larger of the two gradient magnitudes."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def finite_diff_grad_batched(f_batch: Callable[[np.ndarray], np.ndarray], x, eps: float = 1e-3) -> np.ndarray:
    """Same central differences as :func:`finite_diff_grad`, evaluated in one call.

    ``f_batch`` receives a stack of ``2 * x.size`` perturbed copies of ``x``
    (shape ``(2 * x.size, *x.shape)``; ``+eps`` copies first) and must return
    one scalar per copy.  Valid only for functions that treat the stack as
    independent samples.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    n = x.size
    stack = np.broadcast_to(x.reshape(-1), (2 * n, n)).copy()
    idx = np.arange(n)
    stack[idx, idx] += eps
    stack[n + idx, idx] -= eps
    vals = np.asarray(f_batch(stack.reshape((2 * n,) + x.shape)), dtype=np.float64)
    if vals.shape != (2 * n,):
        raise ValueError(f"f_batch must return {2 * n} values, got shape {vals.shape}")
    return ((vals[:n] - vals[n:]) / (2 * eps)).reshape(x.shape)
