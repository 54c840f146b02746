"""Differentiable network primitives built on :mod:`stylemix.autodiff`."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import kernels
from .autodiff import Node, ShapeError


def conv2d(x: Node, weight: Node, bias: Optional[Node] = None, stride: int = 1, pad: int = 0) -> Node:
    """Cross-correlation of ``x`` (B, Cin, H, W) with ``weight`` (Cout, Cin, k, k)."""
    if x.value.ndim != 4 or weight.value.ndim != 4:
        raise ShapeError("conv2d", x.shape, weight.shape)
    B, C, H, W = x.shape
    Cout, Cin, k, k2 = weight.shape
    if Cin != C or k != k2:
        raise ShapeError("conv2d", x.shape, weight.shape)
    if bias is not None and bias.shape != (Cout,):
        raise ShapeError("conv2d bias", bias.shape, (Cout,))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError("conv2d (kernel larger than padded input)", x.shape, weight.shape)

    cols = kernels.im2col(x.value, k, stride, pad)
    wmat = weight.value.reshape(Cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.value
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2))

    def _gmat(g):
        return g.transpose(0, 2, 3, 1).reshape(-1, Cout)

    parents = [
        (x, lambda g: kernels.col2im(_gmat(g) @ wmat, x.shape, k, stride, pad)),
        (weight, lambda g: (_gmat(g).T @ cols).reshape(weight.shape)),
    ]
    if bias is not None:
        parents.append((bias, lambda g: g.sum(axis=(0, 2, 3))))
    return Node(out, parents)


def relu(x: Node) -> Node:
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0).astype(x.value.dtype, copy=False), ((x, lambda g: g * mask),))


def global_avg_pool(x: Node) -> Node:
    """(B, C, H, W) -> (B, C) spatial mean."""
    if x.value.ndim != 4:
        raise ShapeError("global_avg_pool", x.shape)
    shape = x.shape
    n = shape[2] * shape[3]
    return Node(
        x.value.mean(axis=(2, 3)),
        ((x, lambda g: np.broadcast_to(g[:, :, None, None] / n, shape).copy()),),
    )


def linear(features: Node, weights: Node, bias: Node) -> Node:
    """(B, F) @ (F, K) + (K,) -> (B, K)."""
    f, w = features.value, weights.value
    if f.ndim != 2 or w.ndim != 2 or f.shape[1] != w.shape[0]:
        raise ShapeError("linear", f.shape, w.shape)
    if bias.shape != (w.shape[1],):
        raise ShapeError("linear bias", bias.shape, (w.shape[1],))
    return Node(
        f @ w + bias.value,
        (
            (features, lambda g: g @ w.T),
            (weights, lambda g: f.T @ g),
            (bias, lambda g: g.sum(axis=0)),
        ),
    )


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Node, labels) -> Node:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    z = logits.value
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError("softmax_cross_entropy", z.shape, labels.shape)
    K = z.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0, {K})")
    logp = log_softmax(z)
    B = z.shape[0]
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def rule(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return d * (g / B)

    return Node(np.asarray(loss, dtype=z.dtype), ((logits, rule),))
