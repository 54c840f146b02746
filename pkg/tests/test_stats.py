import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylemix import autodiff as ad
from stylemix.stats import DEFAULT_EPS, AffineParams, adain, blocked_stats, compute_stats, instance_normalize


def _loop_mu_sigma(channel):
    vals = [v for row in channel for v in row]
    m = sum(vals) / len(vals)
    return m, math.sqrt(sum((v - m) ** 2 for v in vals) / len(vals))


def test_default_eps():
    assert DEFAULT_EPS == 1e-6


def test_compute_stats_small_channel():
    ch = [[1.0, 2.0], [3.0, 4.0]]
    s = compute_stats(np.array(ch).reshape(1, 1, 2, 2), eps=1e-300)
    m, sd = _loop_mu_sigma(ch)
    assert s.mu[0, 0] == m == 2.5
    assert s.sigma[0, 0] == pytest.approx(sd, rel=1e-15)
    assert s.sigma[0, 0] == pytest.approx(math.sqrt(1.25), rel=1e-15)


def test_constant_channel_sigma_is_eps_floor():
    s = compute_stats(np.full((2, 3, 4, 4), 7.0), eps=1e-6)
    assert np.all(s.sigma == math.sqrt(0.0 + 1e-6))
    assert np.all(s.sigma == 1e-3)


def test_compute_stats_rejects_bad_input():
    with pytest.raises(ValueError):
        compute_stats(np.array([np.nan] * 4).reshape(1, 1, 2, 2))
    with pytest.raises(ValueError):
        compute_stats(np.ones((1, 1, 2, 2)), eps=0.0)


def test_blocked_stats_match_and_block(rng):
    x = ad.Node(rng.normal(size=(2, 3, 4, 4)))
    mu, sigma = blocked_stats(x)
    ref = compute_stats(x.value)
    np.testing.assert_array_equal(mu.value, ref.mu)
    np.testing.assert_array_equal(sigma.value, ref.sigma)
    g = ad.backward(ad.total(ad.mul(mu, sigma)))[x]
    assert np.all(g == 0.0)


def test_instance_normalize_constant_input_is_zero():
    out = instance_normalize(np.full((1, 2, 3, 3), 4.0), AffineParams(np.ones(2), np.zeros(2)))
    np.testing.assert_array_equal(out, 0.0)


def test_instance_normalize_moments(rng):
    x = rng.normal(2.0, 1.5, size=(3, 4, 6, 6))
    out = instance_normalize(x, AffineParams(np.ones(4), np.zeros(4)))
    raw_sd = x.std(axis=(2, 3))
    np.testing.assert_allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=(2, 3)), raw_sd / np.sqrt(raw_sd**2 + 1e-6), rtol=1e-12)
    np.testing.assert_allclose(out.std(axis=(2, 3)), 1.0, atol=1e-3)


def test_instance_normalize_affine(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    out = instance_normalize(x, AffineParams(np.full(3, 2.0), np.full(3, 5.0)))
    raw_sd = x.std(axis=(2, 3))
    np.testing.assert_allclose(out.mean(axis=(2, 3)), 5.0, rtol=1e-12)
    np.testing.assert_allclose(out.std(axis=(2, 3)), 2.0 * raw_sd / np.sqrt(raw_sd**2 + 1e-6), rtol=1e-10)


def test_instance_normalize_reconstructs_exactly(rng):
    x = rng.normal(size=(3, 4, 5, 5)) * 3 + 1
    s = compute_stats(x)
    np.testing.assert_array_equal(instance_normalize(x, AffineParams(s.sigma, s.mu)), x)


def test_instance_normalize_shape_error():
    with pytest.raises(ad.ShapeError):
        instance_normalize(np.ones((1, 3, 2, 2)), AffineParams(np.ones(2), np.zeros(2)))


def test_adain_self_is_exact_identity(rng):
    x = rng.normal(size=(4, 3, 5, 5))
    np.testing.assert_array_equal(adain(x, x), x)


def test_adain_output_statistics(rng):
    x = rng.normal(size=(4, 3, 6, 6))
    y = rng.normal(3.0, 2.0, size=(4, 3, 6, 6))
    out = adain(x, y)
    sy = compute_stats(y)
    np.testing.assert_allclose(out.mean(axis=(2, 3)), sy.mu, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(compute_stats(out).sigma, sy.sigma, rtol=1e-3)


def test_adain_constant_content(rng):
    y = rng.normal(size=(2, 3, 4, 4))
    out = adain(np.full((2, 3, 4, 4), 1.5), y)
    np.testing.assert_allclose(out, np.broadcast_to(y.mean(axis=(2, 3))[:, :, None, None], out.shape), atol=1e-12)


def test_adain_channel_mismatch():
    with pytest.raises(ad.ShapeError):
        adain(np.ones((2, 3, 4, 4)), np.ones((2, 2, 4, 4)))


@settings(max_examples=25, deadline=None)
@given(B=st.integers(1, 5), C=st.integers(1, 4), H=st.integers(1, 5), seed=st.integers(0, 10**6))
def test_stats_are_instance_local(B, C, H, seed):
    x = np.random.default_rng(seed).normal(size=(B, C, H, H + 1))
    whole = compute_stats(x)
    for b in range(B):
        one = compute_stats(x[b:b + 1])
        np.testing.assert_array_equal(whole.mu[b], one.mu[0])
        np.testing.assert_array_equal(whole.sigma[b], one.sigma[0])
    assert np.all(whole.sigma >= math.sqrt(1e-6))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(0.5, 5.0), shift=st.floats(-3, 3))
def test_adain_sigma_recovery_property(seed, scale, shift):
    r = np.random.default_rng(seed)
    x = r.normal(size=(3, 2, 5, 5))
    y = r.normal(shift, scale, size=(3, 2, 5, 5))
    y = y[(y.var(axis=(2, 3)) >= 1e-2).all(axis=1)]
    x = x[: len(y)]
    if len(y) == 0:
        return
    out = adain(x, y)
    np.testing.assert_allclose(compute_stats(out).sigma, compute_stats(y).sigma, rtol=1e-3)
