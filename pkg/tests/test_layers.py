import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylemix import autodiff as ad
from stylemix import layers
from conftest import assert_grad_close, numeric_grad


def _conv_loop(x, w, b, stride, pad):
    B, C, H, W = x.shape
    K, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, K, Ho, Wo))
    for n in range(B):
        for o in range(K):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[n, o, i, j] = (patch * w[o]).sum() + (0.0 if b is None else b[o])
    return out


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    w = np.zeros((3, 3, 1, 1))
    w[np.arange(3), np.arange(3)] = 1.0
    out = layers.conv2d(ad.Node(x), ad.Node(w))
    np.testing.assert_array_equal(out.value, x)


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 2), (3, 2, 3)])
def test_conv_matches_loop(rng, stride, pad, k):
    x = rng.normal(size=(2, 3, 7, 7))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    out = layers.conv2d(ad.Node(x), ad.Node(w), ad.Node(b), stride, pad)
    np.testing.assert_allclose(out.value, _conv_loop(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv_shape_errors(rng):
    with pytest.raises(ad.ShapeError):
        layers.conv2d(ad.Node(np.zeros((1, 2, 5, 5))), ad.Node(np.zeros((3, 3, 3, 3))))
    with pytest.raises(ad.ShapeError):
        layers.conv2d(ad.Node(np.zeros((1, 3, 2, 2))), ad.Node(np.zeros((3, 3, 3, 3))))


@settings(max_examples=15, deadline=None)
@given(
    B=st.integers(1, 3), C=st.integers(1, 3), H=st.integers(3, 4), K=st.integers(1, 3),
    stride=st.integers(1, 2), pad=st.integers(0, 1), seed=st.integers(0, 10**6),
)
def test_conv_fd(B, C, H, K, stride, pad, seed):
    r = np.random.default_rng(seed)
    x0, w0, b0 = r.normal(size=(B, C, H, H)), r.normal(size=(K, C, 3, 3)), r.normal(size=K)
    if H + 2 * pad < 3:
        return
    wt = r.normal(size=_conv_loop(x0, w0, b0, stride, pad).shape)
    x, w, b = ad.Node(x0), ad.Node(w0), ad.Node(b0)
    grads = ad.backward(ad.total(ad.mul(layers.conv2d(x, w, b, stride, pad), ad.constant(wt))))
    f = lambda xv, wv, bv: float((_conv_loop(xv, wv, bv, stride, pad) * wt).sum())
    assert_grad_close(grads[x], numeric_grad(lambda v: f(v, w0, b0), x0))
    assert_grad_close(grads[w], numeric_grad(lambda v: f(x0, v, b0), w0))
    assert_grad_close(grads[b], numeric_grad(lambda v: f(x0, w0, v), b0))


def test_relu_definition():
    out = layers.relu(ad.Node(np.array([-2.0, 3.0])))
    np.testing.assert_array_equal(out.value, [0.0, 3.0])


def test_relu_fd(rng):
    x0 = rng.normal(size=(2, 2, 3, 3))
    x0[np.abs(x0) < 1e-3] = 0.5  # stay off the kink
    x = ad.Node(x0)
    g = ad.backward(ad.total(ad.mul(layers.relu(x), ad.constant(x0 + 2))))[x]
    assert_grad_close(g, numeric_grad(lambda v: float((np.maximum(v, 0) * (x0 + 2)).sum()), x0))


def test_global_avg_pool_fd(rng):
    x0 = rng.normal(size=(2, 3, 3, 2))
    wt = rng.normal(size=(2, 3))
    x = ad.Node(x0)
    g = ad.backward(ad.total(ad.mul(layers.global_avg_pool(x), ad.constant(wt))))[x]
    assert_grad_close(g, numeric_grad(lambda v: float((v.mean(axis=(2, 3)) * wt).sum()), x0))


def test_linear_fd(rng):
    f0, w0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    wt = rng.normal(size=(3, 2))
    f, w, b = ad.Node(f0), ad.Node(w0), ad.Node(b0)
    grads = ad.backward(ad.total(ad.mul(layers.linear(f, w, b), ad.constant(wt))))
    ref = lambda fv, wv, bv: float(((fv @ wv + bv) * wt).sum())
    assert_grad_close(grads[f], numeric_grad(lambda v: ref(v, w0, b0), f0))
    assert_grad_close(grads[w], numeric_grad(lambda v: ref(f0, v, b0), w0))
    assert_grad_close(grads[b], numeric_grad(lambda v: ref(f0, w0, v), b0))


def test_linear_shape_error():
    with pytest.raises(ad.ShapeError):
        layers.linear(ad.Node(np.zeros((2, 3))), ad.Node(np.zeros((4, 2))), ad.Node(np.zeros(2)))


@pytest.mark.parametrize("K", [2, 5, 10])
def test_cross_entropy_uniform_logits_is_log_k(K):
    # oracle: -log(1/K) evaluated directly
    oracle = -math.log(1.0 / K)
    loss = layers.softmax_cross_entropy(ad.Node(np.zeros((3, K))), np.array([0, K - 1, K // 2]))
    assert float(loss.value) == pytest.approx(oracle, rel=1e-12)


def test_cross_entropy_stable_for_large_logits():
    loss = layers.softmax_cross_entropy(ad.Node(np.array([[1000.0, 0.0]])), np.array([1]))
    assert float(loss.value) == pytest.approx(1000.0)


def test_cross_entropy_fd(rng):
    z0 = rng.normal(size=(4, 3))
    y = np.array([0, 2, 1, 2])
    z = ad.Node(z0)

    def ref(v):
        m = v.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(v - m).sum(axis=1, keepdims=True)))[:, 0]
        return float((lse - v[np.arange(4), y]).mean())

    g = ad.backward(layers.softmax_cross_entropy(z, y))[z]
    assert_grad_close(g, numeric_grad(ref, z0))


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        layers.softmax_cross_entropy(ad.Node(np.zeros((2, 3))), np.array([0, 3]))
    with pytest.raises(ValueError):
        layers.softmax_cross_entropy(ad.Node(np.zeros((2, 3))), np.array([-1, 0]))
