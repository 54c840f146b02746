import numpy as np
import pytest
from scipy import integrate, special, stats

from stylemix.sampling import beta_gamma_ratio, beta_johnk, sample_beta, sample_lambda


def beta_extreme_mass(alpha, lo=0.05):
    """P(lam < lo or lam > 1 - lo) for Beta(alpha, alpha) by quadrature.

    Substituting u = x**alpha removes the endpoint singularity.
    """
    integrand = lambda u: (1.0 - u ** (1.0 / alpha)) ** (alpha - 1.0) / alpha
    tail = integrate.quad(integrand, 0.0, lo**alpha, epsabs=1e-13)[0] / special.beta(alpha, alpha)
    return 2.0 * tail


def test_support():
    lam = sample_lambda(0.1, 100_000, np.random.default_rng(0))
    assert lam.shape == (100_000,)
    assert np.all((lam >= 0) & (lam <= 1))


@pytest.mark.parametrize("alpha", [0.1, 0.3, 1.0, 2.0, 5.0])
def test_symmetric_mean(alpha):
    lam = sample_lambda(alpha, 100_000, np.random.default_rng(1))
    assert abs(lam.mean() - 0.5) <= 0.01


def test_extreme_mass_matches_quadrature():
    oracle = beta_extreme_mass(0.1)
    assert oracle == pytest.approx(2 * special.betainc(0.1, 0.1, 0.05), rel=1e-9)
    lam = sample_lambda(0.1, 100_000, np.random.default_rng(2))
    empirical = np.mean((lam < 0.05) | (lam > 0.95))
    assert abs(empirical - oracle) <= 0.02


def equiprobable_pvalue(x, a, b, bins=20):
    # Binned rather than KS: for small shapes about 1% of draws round to exactly
    # 1.0 in float64, and those ties alone would fail a KS test.
    edges = stats.beta(a, b).ppf(np.linspace(0.0, 1.0, bins + 1))
    counts = np.histogram(np.clip(x, 0.0, 1.0), bins=edges)[0]
    return stats.chisquare(counts).pvalue


@pytest.mark.parametrize("a,b", [(0.1, 0.1), (0.5, 0.8), (1.0, 1.0)])
def test_johnk_matches_beta_cdf(a, b):
    x = beta_johnk(a, b, 20_000, np.random.default_rng(3))
    assert equiprobable_pvalue(x, a, b) > 0.01


@pytest.mark.parametrize("a,b", [(2.0, 2.0), (1.5, 4.0), (0.3, 0.3)])
def test_gamma_ratio_matches_beta_cdf(a, b):
    x = beta_gamma_ratio(a, b, 20_000, np.random.default_rng(4))
    assert equiprobable_pvalue(x, a, b) > 0.01


def test_dispatch_and_determinism():
    a = sample_beta(0.1, 0.1, 50, np.random.default_rng(7))
    b = sample_beta(0.1, 0.1, 50, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, beta_johnk(0.1, 0.1, 50, np.random.default_rng(7)))
    np.testing.assert_array_equal(
        sample_beta(3.0, 3.0, 50, np.random.default_rng(7)), beta_gamma_ratio(3.0, 3.0, 50, np.random.default_rng(7))
    )


@pytest.mark.parametrize("alpha", [0.0, -1.0])
def test_rejects_nonpositive_alpha(alpha):
    with pytest.raises(ValueError):
        sample_lambda(alpha, 4, np.random.default_rng(0))


def test_rejects_empty_batch():
    with pytest.raises(ValueError):
        sample_lambda(0.1, 0, np.random.default_rng(0))
