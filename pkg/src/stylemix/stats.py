"""Instance statistics and the two reference transforms built on them (IN, AdaIN).

All transforms are evaluated in the affine form ``x * scale + shift`` with
``scale = target_sigma / sigma(x)``.  Whenever the target statistics equal the
source statistics this gives ``scale == 1`` and ``shift == 0`` bit for bit, so
identities such as ``adain(x, x) == x`` hold exactly rather than to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import autodiff as ad
from . import kernels

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class InstanceStats:
    mu: np.ndarray  # (B, C)
    sigma: np.ndarray  # (B, C), sqrt(var + eps)
    eps: float

    def take(self, perm) -> "InstanceStats":
        """Statistics of the batch reordered by ``perm``."""
        return InstanceStats(self.mu[perm], self.sigma[perm], self.eps)


@dataclass(frozen=True)
class AffineParams:
    gamma: np.ndarray  # (C,)
    beta: np.ndarray  # (C,)


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps!r}")


def _as_array(x) -> np.ndarray:
    x = x.value if isinstance(x, ad.Node) else np.asarray(x)
    if x.ndim != 4:
        raise ad.ShapeError("instance statistics", x.shape)
    return x


def compute_stats(x, eps: float = DEFAULT_EPS) -> InstanceStats:
    """Per-(instance, channel) spatial mean and eps-floored standard deviation."""
    _check_eps(eps)
    x = _as_array(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("compute_stats: input contains non-finite values")
    mean, var = kernels.spatial_moments(x)
    return InstanceStats(mean, np.sqrt(var + eps), eps)


def blocked_stats(x: ad.Node, eps: float = DEFAULT_EPS) -> Tuple[ad.Node, ad.Node]:
    """Graph version of :func:`compute_stats` with both outputs grad-blocked."""
    _check_eps(eps)
    mean, var = ad.reduce_spatial_moments(x)
    sigma = ad.sqrt(ad.add(var, eps))
    return ad.stop_gradient(mean), ad.stop_gradient(sigma)


def _affine(x: np.ndarray, src: InstanceStats, mu_t: np.ndarray, sigma_t: np.ndarray) -> np.ndarray:
    scale = sigma_t / src.sigma
    shift = mu_t - src.mu * scale
    return x * scale[:, :, None, None] + shift[:, :, None, None]


def instance_normalize(x, params: AffineParams, eps: float = DEFAULT_EPS) -> np.ndarray:
    """gamma * (x - mu(x)) / sigma(x) + beta, per instance and channel."""
    x = _as_array(x)
    gamma, beta = np.asarray(params.gamma), np.asarray(params.beta)
    B, C = x.shape[:2]
    # (B, C) statistics are accepted too, for per-instance reconstruction
    if gamma.shape not in ((C,), (B, C)) or beta.shape != gamma.shape:
        raise ad.ShapeError("instance_normalize", x.shape, gamma.shape)
    s = compute_stats(x, eps)
    return _affine(x, s, np.broadcast_to(beta, (B, C)), np.broadcast_to(gamma, (B, C)))


def adain(x, y, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Give each instance of ``x`` the statistics of the matching instance of ``y``."""
    x, y = _as_array(x), _as_array(y)
    if x.shape[:2] != y.shape[:2]:
        raise ad.ShapeError("adain", x.shape, y.shape)
    sx, sy = compute_stats(x, eps), compute_stats(y, eps)
    return _affine(x, sx, sy.mu, sy.sigma)
