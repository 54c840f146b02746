"""MixStyle: probabilistic mixing of instance statistics across a mini-batch.

Random stream order within one active call is fixed: the gate draw, then the
B mixing weights, then the reference permutation.  An inactive call consumes
only the gate draw.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .sampling import sample_lambda
from .stats import DEFAULT_EPS, InstanceStats, blocked_stats

PERM_MODES = ("random_shuffle", "domain_label")
MIX_MODES = ("convex", "replace")
SHUFFLE_SCOPES = ("per_layer", "shared")


@dataclass(frozen=True)
class MixStyleConfig:
    p: float = 0.5
    alpha: float = 0.1
    eps: float = DEFAULT_EPS
    perm_mode: str = "random_shuffle"
    mix_mode: str = "convex"
    shuffle_scope: str = "per_layer"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps!r}")
        for name, allowed in (
            ("perm_mode", PERM_MODES),
            ("mix_mode", MIX_MODES),
            ("shuffle_scope", SHUFFLE_SCOPES),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MixEvent:
    """What one MixStyle call did; inactive calls only fill ``activated``."""

    activated: bool
    lam: Optional[np.ndarray] = None
    perm: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    gamma_mix: Optional[np.ndarray] = None
    beta_mix: Optional[np.ndarray] = None


def reference_permutation(batch_size: int, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Index array selecting the reference instance for each batch position.

    ``domain_label`` assumes the layout ``[x_i, x_j]`` with equal halves: the
    reversed index is split in two and each half shuffled independently, so
    every instance is paired with one from the other half.
    """
    if batch_size < 2:
        raise ValueError("reference_permutation needs a batch of at least 2")
    if mode == "random_shuffle":
        return rng.permutation(batch_size)
    if mode == "domain_label":
        if batch_size % 2:
            raise ValueError(f"domain_label mode needs an even batch, got {batch_size}")
        half = batch_size // 2
        rev = np.arange(batch_size - 1, -1, -1)
        perm_j, perm_i = rev[:half], rev[half:]
        perm_j = perm_j[rng.permutation(half)]
        perm_i = perm_i[rng.permutation(half)]
        return np.concatenate([perm_j, perm_i])
    raise ValueError(f"unknown permutation mode {mode!r}")


def mix_statistics(
    stats: InstanceStats, perm: np.ndarray, lam: np.ndarray, mix_mode: str = "convex"
) -> Tuple[np.ndarray, np.ndarray]:
    """Mixed (sigma, mu) pair, returned as ``(gamma_mix, beta_mix)``, each (B, C)."""
    B = stats.mu.shape[0]
    perm = np.asarray(perm)
    lam = np.asarray(lam, dtype=stats.mu.dtype)
    if perm.shape != (B,) or lam.shape != (B,):
        raise ad.ShapeError("mix_statistics", stats.mu.shape, perm.shape if perm.shape != (B,) else lam.shape)
    ref = stats.take(perm)
    if mix_mode == "replace":
        return ref.sigma.copy(), ref.mu.copy()
    if mix_mode != "convex":
        raise ValueError(f"unknown mix mode {mix_mode!r}")
    w = lam[:, None]
    gamma_mix = w * stats.sigma + (1 - w) * ref.sigma
    beta_mix = w * stats.mu + (1 - w) * ref.mu
    return gamma_mix, beta_mix


def mixstyle_forward(
    x: ad.Node,
    cfg: MixStyleConfig,
    rng: np.random.Generator,
    training: bool,
    *,
    lam: Optional[np.ndarray] = None,
    perm: Optional[np.ndarray] = None,
    perm_cache: Optional[dict] = None,
    trace: Optional[List[MixEvent]] = None,
) -> ad.Node:
    """Apply MixStyle to a (B, C, H, W) node.

    ``lam`` and ``perm`` override the random draws (and skip them).  When
    ``cfg.shuffle_scope == "shared"`` and a ``perm_cache`` dict is supplied, the
    first active call stores its permutation there and later calls reuse it.
    """
    if not training:
        return x
    if rng.random() >= cfg.p:
        if trace is not None:
            trace.append(MixEvent(False))
        return x

    B = x.shape[0]
    if B < 2:
        raise ValueError("MixStyle needs a batch of at least 2 instances")
    if cfg.perm_mode == "domain_label" and B % 2:
        raise ValueError(f"domain_label mode needs an even batch [x_i, x_j], got B={B}")

    mu, sigma = blocked_stats(x, cfg.eps)
    stats = InstanceStats(mu.value, sigma.value, cfg.eps)

    if lam is None:
        lam = sample_lambda(cfg.alpha, B, rng)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (B,))
    if perm is None:
        if cfg.shuffle_scope == "shared" and perm_cache is not None and "perm" in perm_cache:
            perm = perm_cache["perm"]
        else:
            perm = reference_permutation(B, cfg.perm_mode, rng)
            if cfg.shuffle_scope == "shared" and perm_cache is not None:
                perm_cache["perm"] = perm

    gamma_mix, beta_mix = mix_statistics(stats, perm, lam, cfg.mix_mode)
    dtype = x.value.dtype
    mu4 = ad.reshape(mu, (B, -1, 1, 1))
    sigma4 = ad.reshape(sigma, (B, -1, 1, 1))
    # x * (gamma / sigma) + (beta - mu * gamma / sigma), the normalise/denormalise
    # pair folded into one affine map per (instance, channel)
    scale = ad.div(ad.constant(gamma_mix[:, :, None, None].astype(dtype)), sigma4)
    shift = ad.sub(ad.constant(beta_mix[:, :, None, None].astype(dtype)), ad.mul(mu4, scale))
    out = ad.add(ad.mul(x, scale), shift)

    if trace is not None:
        trace.append(MixEvent(True, lam.copy(), np.asarray(perm).copy(), stats.mu, stats.sigma, gamma_mix, beta_mix))
    return out
