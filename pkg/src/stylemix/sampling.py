"""Exact Beta(a, b) samplers: Johnk's rejection method and the Gamma ratio."""

from __future__ import annotations

import numpy as np


def beta_johnk(a: float, b: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Johnk (1964) rejection sampler, accurate for small shapes.

    Works in log space: for a = 0.1 the power U**(1/a) underflows long before
    the ratio it feeds does.
    """
    out = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        n = todo.size
        # 1 - U lies in (0, 1], keeping the logs finite
        log_x = np.log1p(-rng.random(n)) / a
        log_y = np.log1p(-rng.random(n)) / b
        log_s = np.logaddexp(log_x, log_y)
        ok = log_s <= 0.0
        out[todo[ok]] = np.exp(log_x[ok] - log_s[ok])
        todo = todo[~ok]
    return out


def beta_gamma_ratio(a: float, b: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """X / (X + Y) with X ~ Gamma(a), Y ~ Gamma(b)."""
    x = rng.standard_gamma(a, size)
    y = rng.standard_gamma(b, size)
    return x / (x + y)


def sample_beta(a: float, b: float, size: int, rng: np.random.Generator) -> np.ndarray:
    if a <= 0 or b <= 0:
        raise ValueError(f"Beta shapes must be positive, got ({a}, {b})")
    if max(a, b) <= 1.0:
        return beta_johnk(a, b, size, rng)
    return beta_gamma_ratio(a, b, size, rng)


def sample_lambda(alpha: float, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Instance-wise mixing weights, shape (batch_size,), drawn from Beta(alpha, alpha)."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    return sample_beta(alpha, alpha, batch_size, rng)
