import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from signdet.tensor import (
    ConvSpec,
    activation,
    activation_backward,
    as_tensor,
    conv2d,
    conv2d_backward,
    directional_pool,
    directional_pool_backward,
    elementwise,
    finite_diff_grad,
    finite_diff_grad_batched,
    nearest_indices,
    relative_error,
    resize_nearest,
    resize_nearest_backward,
    same_padding,
    sigmoid,
    softmax,
    softmax_backward,
)

X22 = as_tensor([[[[1, 2], [3, 4]]]])


def _spec(rng, f, c, kh, kw, groups=1, **geometry):
    k = rng.standard_normal((f, c // groups, kh, kw))
    return ConvSpec(k, rng.standard_normal(f), groups=groups, **geometry)


# --- conv2d ---------------------------------------------------------------


def test_conv_scaling_kernel():
    y = conv2d(X22, ConvSpec(as_tensor([[[[2]]]])))
    np.testing.assert_array_equal(y[0, 0], [[2, 4], [6, 8]])


def test_conv_zero_kernel_gives_bias(rng):
    x = as_tensor(rng.standard_normal((2, 3, 5, 6)))
    spec = ConvSpec(np.zeros((4, 3, 3, 3), np.float32), as_tensor([0.5, -1, 2, 7]), padding=1)
    y = conv2d(x, spec)
    assert y.shape == (2, 4, 5, 6)
    np.testing.assert_array_equal(y, np.broadcast_to(spec.bias[None, :, None, None], y.shape))


def test_conv_all_ones_padded():
    y = conv2d(X22, ConvSpec(np.ones((1, 1, 3, 3), np.float32), padding=1))
    np.testing.assert_array_equal(y[0, 0], [[10, 10], [10, 10]])


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((2, 4, 7, 6))
    spec = _spec(rng, 6, 4, 3, 2, groups=2, stride=2, padding=(1, 2), dilation=2)
    y = conv2d(x, spec)
    ph, pw = spec.pads
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ref = np.zeros_like(y)
    fg, cg = 3, 2
    for n in range(2):
        for f in range(6):
            g = f // fg
            for i in range(y.shape[2]):
                for j in range(y.shape[3]):
                    acc = spec.bias[f]
                    for c in range(cg):
                        for u in range(3):
                            for v in range(2):
                                acc += spec.kernel[f, c, u, v] * xp[n, g * cg + c, i * 2 + u * 2, j * 2 + v * 2]
                    ref[n, f, i, j] = acc
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_conv_output_extent_formula(rng):
    for _ in range(30):
        h, w = rng.integers(5, 12, 2)
        kh, kw, s, p, d = (int(v) for v in rng.integers(1, 4, 5))
        spec = ConvSpec(np.ones((1, 1, kh, kw)), stride=s, padding=p, dilation=d)
        expect = ((h + 2 * p - d * (kh - 1) - 1) // s + 1, (w + 2 * p - d * (kw - 1) - 1) // s + 1)
        if min(expect) < 1:
            continue
        assert conv2d(np.zeros((1, 1, h, w)), spec).shape[2:] == expect


def test_conv_linear(rng):
    for _ in range(20):
        spec = ConvSpec(rng.standard_normal((3, 2, 3, 3)).astype(np.float32), padding=1)
        x, y = (as_tensor(rng.standard_normal((1, 2, 6, 5))) for _ in range(2))
        a, b = rng.uniform(-2, 2, 2)
        lhs = conv2d(as_tensor(a * x + b * y), spec)
        rhs = a * conv2d(x, spec) + b * conv2d(y, spec)
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)


def test_conv_errors():
    with pytest.raises(ValueError, match="C=3"):
        conv2d(np.zeros((1, 3, 4, 4)), ConvSpec(np.zeros((1, 2, 1, 1))))
    with pytest.raises(ValueError, match="empty"):
        conv2d(np.zeros((1, 1, 2, 2)), ConvSpec(np.zeros((1, 1, 3, 3))))
    with pytest.raises(ValueError):
        ConvSpec(np.zeros((2, 1, 1, 1)), groups=3)


def test_separable_kernel_equals_cascade(rng):
    c = 3
    x = as_tensor(rng.standard_normal((1, c, 9, 8)))
    col = rng.standard_normal((c, 3))
    row = rng.standard_normal((c, 3))
    full = np.einsum("ci,cj->cij", col, row)[:, None].astype(np.float32)
    direct = conv2d(x, ConvSpec(full, padding=1, groups=c))
    h = ConvSpec(row[:, None, None, :].astype(np.float32), padding=(0, 1), groups=c)
    v = ConvSpec(col[:, None, :, None].astype(np.float32), padding=(1, 0), groups=c)
    np.testing.assert_allclose(conv2d(conv2d(x, h), v), direct, atol=1e-5)


# --- pooling / resize -------------------------------------------------------


def test_directional_pool_examples():
    np.testing.assert_array_equal(directional_pool(X22, "horizontal").ravel(), [1.5, 3.5])
    np.testing.assert_array_equal(directional_pool(X22, "vertical").ravel(), [2, 3])
    assert directional_pool(X22, "horizontal").shape == (1, 1, 2, 1)
    assert directional_pool(X22, "vertical").shape == (1, 1, 1, 2)


@given(st.floats(-1e3, 1e3, allow_nan=False, width=32), st.integers(1, 9), st.integers(1, 9))
def test_pool_of_constant_is_exact(c, h, w):
    x = np.full((1, 2, h, w), c, dtype=np.float32)
    for axis in ("horizontal", "vertical"):
        assert np.all(directional_pool(x, axis) == np.float32(c))


def test_pool_errors():
    with pytest.raises(ValueError):
        directional_pool(np.zeros((1, 1, 0, 3)), "horizontal")
    with pytest.raises(ValueError):
        directional_pool(X22, "diagonal")


def test_resize_examples():
    up = resize_nearest(X22, 4, 4)
    np.testing.assert_array_equal(up[0, 0], np.kron([[1, 2], [3, 4]], np.ones((2, 2))))
    np.testing.assert_array_equal(resize_nearest(X22, 2, 2), X22)
    np.testing.assert_array_equal(resize_nearest(X22, 1, 1)[0, 0], [[1]])
    with pytest.raises(ValueError):
        resize_nearest(X22, 0, 3)


def _raster_nearest(n_in, n_out):
    out = []
    for d in range(n_out):
        pos = Fraction(2 * d + 1, 2) * n_in / n_out
        dist = [abs(Fraction(2 * i + 1, 2) - pos) for i in range(n_in)]
        out.append(dist.index(min(dist)))  # first minimum = lower index on ties
    return out


def test_nearest_indices_match_raster_oracle():
    for n_in in range(1, 25):
        for n_out in range(1, 25):
            assert list(nearest_indices(n_in, n_out)) == _raster_nearest(n_in, n_out), (n_in, n_out)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_resize_then_meanpool_recovers(rng, k):
    x = as_tensor(rng.standard_normal((2, 3, 5, 4)))
    up = resize_nearest(x, 5 * k, 4 * k)
    # reductions run in double precision, where k*k copies sum exactly
    pooled = up.reshape(2, 3, 5, k, 4, k).mean(axis=(3, 5), dtype=np.float64)
    np.testing.assert_array_equal(pooled, x)


# --- activations / softmax / elementwise ------------------------------------


def test_activation_examples():
    assert sigmoid(0.0) == 0.5
    assert activation(np.array([-3.0, 3.0]), "relu").tolist() == [0, 3]
    assert sigmoid(math.log(3)) == pytest.approx(0.75, abs=1e-12)
    for dt in (np.float32, np.float64):
        s = activation(np.linspace(-800, 800, 1601).astype(dt), "sigmoid")
        assert s.dtype == dt
        assert np.all((s > 0) & (s < 1))
    with pytest.raises(ValueError):
        activation(X22, "tanh")


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0, 0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([math.log(2), 0]), [2 / 3, 1 / 3], atol=1e-12)
    np.testing.assert_allclose(softmax([7.0, 7.0, 7.0]), [1 / 3] * 3, atol=1e-12)
    with pytest.raises(ValueError):
        softmax([])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_sum_and_shift(v, c):
    p = softmax(v)
    assert np.all(p > 0)
    assert abs(p.sum() - 1) < 1e-6
    np.testing.assert_allclose(softmax(np.array(v) + c), p, atol=1e-6)


def test_elementwise():
    x = X22
    np.testing.assert_array_equal(elementwise(x, np.ones_like(x), "mul"), x)
    a = np.arange(3.0).reshape(1, 1, 3, 1)
    b = np.arange(4.0).reshape(1, 1, 1, 4)
    np.testing.assert_array_equal(elementwise(a, b, "mul")[0, 0], np.outer(np.arange(3), np.arange(4)))
    np.testing.assert_array_equal(elementwise(np.array([[1, 2]]), np.array([[3, 4]]), "add"), [[4, 6]])
    with pytest.raises(ValueError):
        elementwise(np.zeros((2, 3)), np.zeros((3, 2)), "add")
    with pytest.raises(ValueError):
        elementwise(np.zeros((1, 3)), np.zeros(3), "add")


# --- finite differences and backward passes ---------------------------------


def test_finite_diff_examples():
    x = np.array([0.3, -1.2, 4.0])
    np.testing.assert_allclose(finite_diff_grad(np.sum, x), np.ones(3), atol=1e-9)
    np.testing.assert_allclose(finite_diff_grad(lambda v: np.sum(v ** 2), [1.0, 2.0]), [2, 4], atol=1e-6)
    with pytest.raises(ValueError):
        finite_diff_grad(np.sum, x, eps=0)
    batched = finite_diff_grad_batched(lambda s: (s ** 3).sum(axis=1), x)
    np.testing.assert_allclose(batched, finite_diff_grad(lambda v: np.sum(v ** 3), x), atol=1e-9)


def test_relative_error_is_scale_free():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0
    assert relative_error([100.0, 0.0], [100.0, 0.1]) == pytest.approx(1e-3)
    assert relative_error([0.0], [0.0]) == 0


TRIALS = 100


def test_conv_backward_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(TRIALS):
        groups = int(rng.choice([1, 2]))
        spec = _spec(rng, 2, 2, 3, 2, groups=groups, stride=int(rng.integers(1, 3)),
                     padding=(1, 0), dilation=int(rng.integers(1, 3)))
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal(conv2d(x, spec).shape)
        gx, gk, gb = conv2d_backward(x, spec, w)
        nx = finite_diff_grad(lambda t: np.sum(conv2d(t, spec) * w), x)
        nk = finite_diff_grad(lambda k: np.sum(conv2d(x, ConvSpec(k, spec.bias, spec.stride, spec.padding,
                                                                  spec.dilation, spec.groups)) * w), spec.kernel)
        nb = finite_diff_grad(lambda b: np.sum(conv2d(x, ConvSpec(spec.kernel, b, spec.stride, spec.padding,
                                                                  spec.dilation, spec.groups)) * w), spec.bias)
        worst = max(worst, relative_error(gx, nx), relative_error(gk, nk), relative_error(gb, nb))
    assert worst < 1e-3


def test_pool_and_resize_backward(rng):
    worst = 0.0
    for _ in range(TRIALS):
        x = rng.standard_normal((1, 2, int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        for axis in ("horizontal", "vertical"):
            w = rng.standard_normal(directional_pool(x, axis).shape)
            g = directional_pool_backward(x.shape, axis, w)
            worst = max(worst, relative_error(g, finite_diff_grad(lambda t: np.sum(directional_pool(t, axis) * w), x)))
        th, tw = (int(v) for v in rng.integers(1, 9, 2))
        w = rng.standard_normal((1, 2, th, tw))
        g = resize_nearest_backward(w, *x.shape[2:])
        worst = max(worst, relative_error(g, finite_diff_grad(lambda t: np.sum(resize_nearest(t, th, tw) * w), x)))
    assert worst < 1e-3


def test_activation_and_softmax_backward(rng):
    worst = 0.0
    for _ in range(TRIALS):
        x = rng.standard_normal(6) * 3
        x = x[np.abs(x) > 0.01]  # keep relu's kink outside the stencil
        w = rng.standard_normal(x.shape)
        for kind in ("sigmoid", "relu"):
            g = activation_backward(x, kind, w)
            worst = max(worst, relative_error(g, finite_diff_grad(lambda t: np.sum(activation(t, kind) * w), x)))
        p = softmax(x)
        g = softmax_backward(p, w)
        worst = max(worst, relative_error(g, finite_diff_grad(lambda t: np.sum(softmax(t) * w), x)))
    assert worst < 1e-3


def test_same_padding_preserves_extent(rng):
    for k in (1, 3, 5, 7):
        for d in (1, 2, 3):
            spec = ConvSpec(np.ones((1, 1, 1, k)), padding=same_padding(1, k, d), dilation=d)
            assert conv2d(np.zeros((1, 1, 4, 11)), spec).shape == (1, 1, 4, 11)


def test_float32_default_is_preserved(rng):
    x = as_tensor(rng.standard_normal((1, 2, 4, 4)))
    assert x.dtype == np.float32
    spec = ConvSpec(np.ones((2, 2, 1, 1), np.float32))
    assert conv2d(x, spec).dtype == np.float32
    assert resize_nearest(x, 8, 8).dtype == np.float32
