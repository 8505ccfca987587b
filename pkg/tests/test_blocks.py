import numpy as np
import pytest

from signdet import blocks as B
from signdet.gradcheck import CHECKS, run_check
from signdet.tensor import ConvSpec, as_tensor, conv2d, identity_conv, resize_nearest

X22 = as_tensor([[[[1, 2], [3, 4]]]])

# sigma(1.5), sigma(3.5), sigma(2), sigma(3): pooled rows/columns of X22 pass
# unchanged through identity convs, identity norm and ReLU
SIG = {1.5: 0.8175744761936437, 3.5: 0.9706877692486436, 2.0: 0.8807970779778823, 3.0: 0.9525741268224334}


def _unit_conv(c=1):
    return identity_conv(c)


def _identity_ca():
    one = lambda: np.ones(1, np.float32)  # noqa: E731
    zero = lambda: np.zeros(1, np.float32)  # noqa: E731
    return B.CaParams(_unit_conv(), _unit_conv(), _unit_conv(), one(), zero(), zero(), one(), bn_eps=0.0)


# --- coordinate attention ---------------------------------------------------


def test_ca_zero_init_quarter(rng):
    for c, ratio in ((4, 1), (8, 4), (6, 3)):
        x = as_tensor(rng.standard_normal((2, c, 5, 7)) * 3)
        y = B.coordinate_attention(x, B.CaParams.build(c, ratio))
        np.testing.assert_allclose(y, 0.25 * x, atol=1e-6)


def test_ca_hand_trace():
    p = _identity_ca()
    gh, gw = B.coordinate_attention_maps(X22, p)
    np.testing.assert_allclose(gh.ravel(), [SIG[1.5], SIG[3.5]], rtol=1e-6)
    np.testing.assert_allclose(gw.ravel(), [SIG[2.0], SIG[3.0]], rtol=1e-6)
    expect = np.array([[1 * SIG[1.5] * SIG[2.0], 2 * SIG[1.5] * SIG[3.0]],
                       [3 * SIG[3.5] * SIG[2.0], 4 * SIG[3.5] * SIG[3.0]]])
    np.testing.assert_allclose(B.coordinate_attention(X22, p)[0, 0], expect, rtol=1e-6)


def test_ca_maps_strictly_inside_unit_interval(rng):
    for _ in range(20):
        p = B.CaParams.build(4, 2, rng=rng, scale=2.0)
        x = as_tensor(rng.standard_normal((1, 4, 6, 5)) * 5)
        gh, gw = B.coordinate_attention_maps(x, p)
        assert gh.shape == (1, 4, 6, 1) and gw.shape == (1, 4, 1, 5)
        for g in (gh, gw):
            assert np.all((g > 0) & (g < 1))


def test_ca_errors():
    with pytest.raises(ValueError, match="divisible"):
        B.CaParams.build(6, 4)
    with pytest.raises(ValueError, match="C=3"):
        B.coordinate_attention(np.zeros((1, 3, 4, 4), np.float32), B.CaParams.build(4))


# --- BiFPN ------------------------------------------------------------------


def _scalar(v, hw=1):
    return np.full((1, 1, hw, hw), v, dtype=np.float64)


def test_bifpn_scalar_trace():
    p = B.BifpnNodeParams([1.0, 2.0], identity_conv(1, np.float64), 1e-4)
    out = B.bifpn_fuse([_scalar(3.0), _scalar(6.0)], p)
    assert out.item() == pytest.approx(15 / 3.0001, abs=1e-12)
    assert out.item() == pytest.approx(4.99983, abs=1e-4)


def test_bifpn_layer4_scalar_trace():
    td_p = B.BifpnNodeParams.uniform(2, 1, dtype=np.float64)
    out_p = B.BifpnNodeParams.uniform(3, 1, dtype=np.float64)
    td, out = B.bifpn_layer4(_scalar(2.0, 2), _scalar(4.0, 1), _scalar(8.0, 4), td_p, out_p)
    expect_td = 6 / 2.0001
    np.testing.assert_allclose(td, expect_td, rtol=1e-12)
    np.testing.assert_allclose(out, (10 + expect_td) / 3.0001, rtol=1e-12)
    assert abs(td.mean() - 3) < 1e-3 and abs(out.mean() - 4.3333) < 1e-3


def test_bifpn_layer4_constant_and_zero_weight(rng):
    c = 3.7
    td, out = B.bifpn_layer4(_scalar(c, 4), _scalar(c, 2), _scalar(c, 8),
                             B.BifpnNodeParams.uniform(2, 1, dtype=np.float64),
                             B.BifpnNodeParams.uniform(3, 1, dtype=np.float64))
    np.testing.assert_allclose(td, c, rtol=1e-4)
    np.testing.assert_allclose(out, c, rtol=1e-4)
    p4 = rng.standard_normal((1, 2, 4, 4))
    td_p = B.BifpnNodeParams([1.5, 0.0], identity_conv(2, np.float64))
    out_p = B.BifpnNodeParams.uniform(3, 2, dtype=np.float64)
    a = B.bifpn_layer4(p4, rng.standard_normal((1, 2, 2, 2)), rng.standard_normal((1, 2, 8, 8)), td_p, out_p)[0]
    b = B.bifpn_layer4(p4, rng.standard_normal((1, 2, 2, 2)), rng.standard_normal((1, 2, 8, 8)), td_p, out_p)[0]
    np.testing.assert_array_equal(a, b)


def test_bifpn_identical_inputs(rng):
    for _ in range(20):
        x = rng.standard_normal((1, 3, 5, 5)) * 10
        w = float(rng.uniform(0.1, 3))
        eps = 1e-4
        p = B.BifpnNodeParams([w, w], identity_conv(3, np.float64), eps)
        out = B.bifpn_fuse([x, x.copy()], p)
        dev = np.abs(out - x).max()
        assert dev <= eps * np.abs(x).max() / (2 * w + eps) * (1 + 1e-9)
        if 2 * w >= 1:
            # the parameter-free bound needs the weights to sum to at least 1 - eps
            assert dev <= eps * np.abs(x).max()


def test_bifpn_bounds_and_rectification(rng):
    for _ in range(50):
        n = int(rng.integers(2, 5))
        sizes = [(6, 6)] + [tuple(int(v) for v in rng.integers(2, 9, 2)) for _ in range(n - 1)]
        inputs = [rng.standard_normal((1, 2, h, w)) for h, w in sizes]
        weights = rng.uniform(-1, 2, n)
        weights[0] = abs(weights[0]) + 0.1
        p = B.BifpnNodeParams(weights, identity_conv(2, np.float64))
        out = B.bifpn_fuse(inputs, p)
        resized = np.stack([resize_nearest(t, 6, 6) for t in inputs])
        s = p.rectified.sum()
        rescaled = out * (s + p.epsilon) / s
        assert np.all(rescaled >= resized.min(axis=0) - 1e-12)
        assert np.all(rescaled <= resized.max(axis=0) + 1e-12)
        # a negative weight is clamped to zero, so that input has no effect
        dead = np.flatnonzero(weights <= 0)
        if len(dead):
            moved = list(inputs)
            moved[dead[0]] = moved[dead[0]] + 100
            np.testing.assert_array_equal(B.bifpn_fuse(moved, p), out)


def test_bifpn_errors():
    p = B.BifpnNodeParams.uniform(2, 1)
    with pytest.raises(ValueError):
        B.bifpn_fuse([], p)
    with pytest.raises(ValueError):
        B.BifpnNodeParams([1, 1], identity_conv(1), epsilon=0)
    with pytest.raises(ValueError, match="half"):
        B.bifpn_layer4(_scalar(1, 4), _scalar(1, 3), _scalar(1, 8), p, B.BifpnNodeParams.uniform(3, 1))
    with pytest.raises(ValueError, match="double"):
        B.bifpn_layer4(_scalar(1, 4), _scalar(1, 2), _scalar(1, 6), p, B.BifpnNodeParams.uniform(3, 1))


# --- ODConv -----------------------------------------------------------------


def test_odconv_single_kernel_is_plain_conv(rng):
    x = as_tensor(rng.standard_normal((2, 3, 7, 7)))
    p = B.OdconvParams.build(3, 5, 1, rng=rng)
    np.testing.assert_array_equal(B.odconv(x, p), conv2d(x, p.kernels[0]))


def test_odconv_saturated_attention(rng):
    x = as_tensor(rng.standard_normal((1, 3, 6, 6)))
    base = B.OdconvParams.build(3, 4, 2, rng=rng)
    p = B.OdconvParams(base.kernels, np.zeros((2, 3)), np.array([50.0, -50.0]))
    np.testing.assert_allclose(B.odconv(x, p), conv2d(x, p.kernels[0]), atol=1e-6)


def test_odconv_kernel_space_equivalence(rng):
    worst = 0.0
    for _ in range(50):
        c, f, k = (int(v) for v in rng.integers(1, 5, 3))
        ks = int(rng.choice([1, 3, 5]))
        x = as_tensor(rng.standard_normal((int(rng.integers(1, 3)), c, 6, 6)))
        p = B.OdconvParams.build(c, f, k, ksize=ks, rng=rng)
        a = B.odconv_attention(x, p)
        np.testing.assert_allclose(a.sum(axis=1), 1, atol=1e-12)
        y = B.odconv(x, p)
        for n in range(x.shape[0]):
            worst = max(worst, np.abs(y[n] - conv2d(x[n:n + 1], p.aggregate(a[n]))[0]).max())
    assert worst <= 1e-5


def test_odconv_errors(rng):
    with pytest.raises(ValueError, match="K >= 1"):
        B.OdconvParams((), np.zeros((0, 2)), np.zeros(0))
    p = B.OdconvParams.build(2, 2, 2, rng=rng)
    bad = ConvSpec(np.zeros((2, 2, 1, 1), np.float32))
    with pytest.raises(ValueError):
        B.OdconvParams((p.kernels[0], bad), p.attn_weight, p.attn_bias)


# --- LSKA -------------------------------------------------------------------


def _dw(kernel, c=1, d=1, horizontal=True):
    k = np.asarray(kernel, np.float32)
    shape = (c, 1, 1, len(k)) if horizontal else (c, 1, len(k), 1)
    w = np.broadcast_to(k.reshape(shape[1:]), shape).copy()
    half = d * (len(k) - 1) // 2
    return ConvSpec(w, padding=(0, half) if horizontal else (half, 0), dilation=d, groups=c)


def _lska(a, b, c=1, d=1):
    return B.LskaParams(_dw(a, c), _dw(a, c, horizontal=False), _dw(b, c, d), _dw(b, c, d, horizontal=False))


def test_lska_identity_branches(rng):
    x = as_tensor(rng.standard_normal((1, 3, 5, 6)))
    np.testing.assert_array_equal(B.lska(x, _lska([0, 1, 0], [0, 0, 1, 0, 0], 3, d=3)), x * x)


def test_lska_zero_kernel(rng):
    x = as_tensor(rng.standard_normal((1, 2, 5, 5)))
    assert not B.lska(x, _lska([0, 0, 0], [0, 1, 0], 2)).any()


def test_lska_hand_example():
    out = B.lska(X22, _lska([0, 1, 0], [1, 1, 1]))
    np.testing.assert_array_equal(out[0, 0], [[10, 20], [30, 40]])


def test_lska_rejects_non_depthwise():
    full = ConvSpec(np.ones((2, 2, 1, 3), np.float32), padding=(0, 1))
    ok = _dw([1, 1, 1], 2)
    with pytest.raises(ValueError, match="depthwise"):
        B.LskaParams(full, ok, ok, ok)


# --- shapes and gradients ---------------------------------------------------


@pytest.mark.parametrize("size", [20, 40, 80, 160])
def test_blocks_preserve_shape(rng, size):
    c = 2
    x = as_tensor(rng.standard_normal((1, c, size, size)))
    assert B.coordinate_attention(x, B.CaParams.build(c, rng=rng)).shape == x.shape
    assert B.lska(x, B.LskaParams.build(c, rng=rng)).shape == x.shape
    assert B.odconv(x, B.OdconvParams.build(c, c, 2, rng=rng)).shape == x.shape
    half = as_tensor(rng.standard_normal((1, c, size // 2, size // 2)))
    double = as_tensor(rng.standard_normal((1, c, 2 * size, 2 * size)))
    td, out = B.bifpn_layer4(x, half, double, B.BifpnNodeParams.uniform(2, c), B.BifpnNodeParams.uniform(3, c))
    assert td.shape == out.shape == x.shape


@pytest.mark.parametrize("name", ["coordinate_attention", "bifpn_fuse", "odconv", "lska"])
def test_block_gradients(name):
    assert name in CHECKS
    res = run_check(name, trials=15, seed=1)
    assert res.passed, res


def test_bifpn_layer4_backward(rng):
    from signdet.tensor import finite_diff_grad, relative_error

    p4 = rng.standard_normal((1, 2, 4, 4))
    p5 = rng.standard_normal((1, 2, 2, 2))
    p3 = rng.standard_normal((1, 2, 8, 8))
    td_p = B.BifpnNodeParams(rng.uniform(0.2, 2, 2), identity_conv(2, np.float64))
    out_p = B.BifpnNodeParams(rng.uniform(0.2, 2, 3), ConvSpec(rng.standard_normal((2, 2, 3, 3)), padding=1))
    gt, go = rng.standard_normal((2, 1, 2, 4, 4))
    grads = B.bifpn_layer4_backward(p4, p5, p3, td_p, out_p, gt, go)
    args = [p4, p5, p3]
    for i, g in enumerate(grads):
        def f(z, i=i):
            a = list(args)
            a[i] = z
            td, out = B.bifpn_layer4(*a, td_p, out_p)
            return np.sum(td * gt) + np.sum(out * go)
        assert relative_error(g, finite_diff_grad(f, args[i])) < 1e-6
