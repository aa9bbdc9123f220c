import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from eis_bayes.presets import numerical_example_prior, stack_prior
from eis_bayes.probdist import (
    BETA_CLAMP,
    BetaFactor,
    LognormalFactor,
    VariationalFamily,
    beta_from_moments,
    beta_ppf,
    beta_ppf_and_grad,
    beta_ppf_grad,
    factor_from_dict,
    lognormal_from_moments,
    log_pdf,
    sample_pathwise,
)

# double precision cannot represent 0.8 or 0.01 exactly; "exact" means a few ulp
ULP_REL = 1e-14


# -- moment matching ---------------------------------------------------------


def test_series_resistance_prior_from_moments():
    f = lognormal_from_moments(2.5, 1.0)
    assert (round(f.mu_ln, 2), round(f.sigma_ln, 2)) == (0.84, 0.39)


def test_stack_fraction_prior_from_moments():
    f = beta_from_moments(0.8, 0.01)
    assert f.a == pytest.approx(12.0, rel=ULP_REL)
    assert f.b == pytest.approx(3.0, rel=ULP_REL)


def test_resistance_prior_from_moments():
    # mean 5 ohm, variance 1 reproduces the tabulated Lognormal(1.59, 0.20)
    f = lognormal_from_moments(5.0, 1.0)
    assert (round(f.mu_ln, 2), round(f.sigma_ln, 2)) == (1.59, 0.20)


def test_tabulated_priors_are_stored_verbatim():
    fam = numerical_example_prior()
    assert fam["R_s"] == LognormalFactor(0.84, 0.39)
    for i in (1, 2, 3):
        assert fam[f"R_{i}"] == LognormalFactor(1.59, 0.20)
        assert fam[f"alpha_{i}"] == BetaFactor(13.91, 5.68)
    assert fam["Q_1"] == LognormalFactor(-0.35, 0.83)
    assert fam["Q_2"] == LognormalFactor(1.96, 0.83)
    assert fam["Q_3"] == LognormalFactor(4.99, 0.55)
    st_fam = stack_prior()
    assert st_fam["R_s"] == LognormalFactor(-5.86, 0.32)
    assert st_fam["alpha_1"] == BetaFactor(12.0, 3.0)
    assert st_fam["Q_3"] == LognormalFactor(6.20, 0.20)


def test_lognormal_degenerate_limit():
    f = lognormal_from_moments(4.0, 1e-300)
    assert f.mu_ln == pytest.approx(math.log(4.0), rel=1e-15)
    assert f.sigma_ln < 1e-140


def test_beta_symmetric_and_bound():
    f = beta_from_moments(0.5, 1e-8)
    assert f.a == f.b
    assert f.a > 1e6
    with pytest.raises(ValueError):
        beta_from_moments(0.5, 0.25)
    with pytest.raises(ValueError):
        beta_from_moments(1.0, 0.01)
    with pytest.raises(ValueError):
        beta_from_moments(0.5, 0.0)


@pytest.mark.parametrize("mean, var", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0), (np.inf, 1.0)])
def test_lognormal_rejects_invalid_moments(mean, var):
    with pytest.raises(ValueError):
        lognormal_from_moments(mean, var)


def test_lognormal_monte_carlo_moments():
    f = lognormal_from_moments(5.0, 2.0)
    x = f.sample(np.random.default_rng(11), 1_000_000)
    assert x.mean() == pytest.approx(5.0, rel=0.01)
    assert x.var() == pytest.approx(2.0, rel=0.01)


def test_beta_monte_carlo_moments():
    f = beta_from_moments(0.71, 0.0105)
    x = f.sample(np.random.default_rng(12), 1_000_000)
    assert x.mean() == pytest.approx(0.71, rel=0.01)
    assert x.var() == pytest.approx(0.0105, rel=0.01)


def test_beta_pathwise_monte_carlo_moments():
    f = beta_from_moments(0.71, 0.0105)
    u = np.random.default_rng(13).random(1_000_000)
    x = beta_ppf(u, f.a, f.b)
    assert x.mean() == pytest.approx(0.71, rel=0.01)
    assert x.var() == pytest.approx(0.0105, rel=0.01)


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-8.0, 8.0), sigma=st.floats(0.01, 2.0))
def test_lognormal_moment_round_trip(mu, sigma):
    f = LognormalFactor(mu, sigma)
    g = lognormal_from_moments(f.mean, f.variance)
    assert g.mu_ln == pytest.approx(mu, rel=1e-10, abs=1e-10)
    assert g.sigma_ln == pytest.approx(sigma, rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.2, 5000.0), b=st.floats(0.2, 5000.0))
def test_beta_moment_round_trip(a, b):
    f = BetaFactor(a, b)
    g = beta_from_moments(f.mean, f.variance)
    assert g.a == pytest.approx(a, rel=1e-10)
    assert g.b == pytest.approx(b, rel=1e-10)


# -- densities ---------------------------------------------------------------


def test_standard_lognormal_at_one():
    assert log_pdf(LognormalFactor(0.0, 1.0), 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_uniform_beta_density_is_zero():
    x = np.linspace(0.01, 0.99, 7)
    np.testing.assert_array_equal(log_pdf(BetaFactor(1.0, 1.0), x), 0.0)


def test_beta_density_normalises():
    f = BetaFactor(13.91, 5.68)
    x = np.linspace(0.0, 1.0, 100_001)
    dens = np.exp(f.log_pdf(x))
    dens[~np.isfinite(dens)] = 0.0
    total = np.sum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))
    assert abs(total - 1.0) < 1e-6
    assert np.isfinite(f.log_pdf(0.71))


def test_densities_match_scipy():
    x = np.array([0.05, 0.3, 0.71, 0.95])
    np.testing.assert_allclose(
        BetaFactor(13.91, 5.68).log_pdf(x), stats.beta(13.91, 5.68).logpdf(x), rtol=1e-12
    )
    y = np.array([0.01, 0.5, 3.0, 40.0])
    np.testing.assert_allclose(
        LognormalFactor(0.84, 0.39).log_pdf(y),
        stats.lognorm(s=0.39, scale=math.exp(0.84)).logpdf(y), rtol=1e-12,
    )


def test_out_of_support_is_minus_infinity():
    assert LognormalFactor(0.0, 1.0).log_pdf(0.0) == -np.inf
    assert LognormalFactor(0.0, 1.0).log_pdf(-1.0) == -np.inf
    for x in (0.0, 1.0, 1.5):
        assert BetaFactor(2.0, 2.0).log_pdf(x) == -np.inf


def test_analytic_moments_match_scipy():
    f = LognormalFactor(-0.35, 0.83)
    ref = stats.lognorm(s=0.83, scale=math.exp(-0.35))
    assert f.mean == pytest.approx(ref.mean(), rel=1e-13)
    assert f.variance == pytest.approx(ref.var(), rel=1e-13)
    g = BetaFactor(13.91, 5.68)
    assert g.mean == pytest.approx(stats.beta(13.91, 5.68).mean(), rel=1e-13)
    assert g.variance == pytest.approx(stats.beta(13.91, 5.68).var(), rel=1e-13)


# -- pathwise sampling -------------------------------------------------------


def test_lognormal_median_path():
    x, dx = sample_pathwise(LognormalFactor(0.0, 0.7), 0.0)
    assert x == 1.0
    assert dx[0] == 1.0
    assert dx[1] == 0.0


def test_lognormal_path_derivatives():
    eps = np.array([-1.3, 0.2, 2.0])
    x, dx = LognormalFactor(0.5, 0.3).sample_pathwise(eps)
    np.testing.assert_allclose(x, np.exp(0.5 + 0.3 * eps), rtol=1e-15)
    np.testing.assert_allclose(dx[:, 0], x)
    np.testing.assert_allclose(dx[:, 1], x * eps)


def test_uniform_beta_path_is_identity():
    x, _ = sample_pathwise(BetaFactor(1.0, 1.0), 0.25)
    assert x == pytest.approx(0.25, abs=1e-15)


def test_beta_ppf_inverts_cdf():
    rng = np.random.default_rng(3)
    u = rng.random(2000)
    a = rng.uniform(0.5, 3000.0, 2000)
    b = rng.uniform(0.5, 3000.0, 2000)
    x = beta_ppf(u, a, b)
    inside = (x > BETA_CLAMP) & (x < 1 - BETA_CLAMP)
    assert np.max(np.abs(special.betainc(a, b, x) - u)[inside]) < 1e-10
    np.testing.assert_allclose(x[inside], special.betaincinv(a, b, u)[inside], rtol=1e-8)


def test_beta_ppf_clamps_endpoints():
    x = beta_ppf(np.array([0.0, 1.0]), 2.0, 3.0)
    np.testing.assert_array_equal(x, [BETA_CLAMP, 1 - BETA_CLAMP])
    with pytest.raises(ValueError):
        beta_ppf(1.5, 2.0, 3.0)


def test_beta_sensitivities_match_inverse_cdf_differences():
    a, b, u = 12.0, 3.0, 0.5
    _, dx = BetaFactor(a, b).sample_pathwise(u)
    h = 1e-5
    # finite differences of an independent inverse: scipy's betaincinv
    fd_a = (special.betaincinv(a * (1 + h), b, u) - special.betaincinv(a * (1 - h), b, u)) / (2 * a * h)
    fd_b = (special.betaincinv(a, b * (1 + h), u) - special.betaincinv(a, b * (1 - h), u)) / (2 * b * h)
    assert abs(dx[0] - fd_a) / abs(fd_a) < 1e-3
    assert abs(dx[1] - fd_b) / abs(fd_b) < 1e-3


@settings(max_examples=40, deadline=None)
@given(
    a=st.floats(0.8, 2000.0), b=st.floats(0.8, 2000.0), u=st.floats(0.02, 0.98),
)
def test_beta_sensitivities_random(a, b, u):
    x = beta_ppf(u, a, b)
    dxa, dxb = beta_ppf_grad(x, a, b)
    h = 1e-5
    fd_a = (special.betaincinv(a * (1 + h), b, u) - special.betaincinv(a * (1 - h), b, u)) / (2 * a * h)
    fd_b = (special.betaincinv(a, b * (1 + h), u) - special.betaincinv(a, b * (1 - h), u)) / (2 * b * h)
    assert abs(dxa - fd_a) <= 1e-3 * abs(fd_a) + 1e-12
    assert abs(dxb - fd_b) <= 1e-3 * abs(fd_b) + 1e-12


def test_fused_ppf_and_grad_matches_separate_calls():
    rng = np.random.default_rng(5)
    u = rng.random((8, 3))
    a = np.array([13.91, 12.0, 969.35])
    b = np.array([5.68, 3.0, 144.11])
    x, dxa, dxb = beta_ppf_and_grad(u, a, b)
    np.testing.assert_array_equal(x, beta_ppf(u, a, b))
    ga, gb = beta_ppf_grad(x, a, b)
    np.testing.assert_allclose(dxa, ga, rtol=1e-12)
    np.testing.assert_allclose(dxb, gb, rtol=1e-12)


def test_sampling_is_reproducible():
    fam = numerical_example_prior()
    s1 = fam.sample(np.random.default_rng(42), 50)
    s2 = fam.sample(np.random.default_rng(42), 50)
    np.testing.assert_array_equal(s1, s2)
    assert not np.array_equal(s1, fam.sample(np.random.default_rng(43), 50))


# -- factor specs and families ------------------------------------------------


def test_factor_from_dict_forms():
    assert factor_from_dict({"kind": "lognormal", "mean": 2.5, "variance": 1.0}) == lognormal_from_moments(2.5, 1.0)
    assert factor_from_dict({"kind": "beta", "a": 12, "b": 3}) == BetaFactor(12.0, 3.0)
    assert factor_from_dict({"kind": "lognormal", "mu_ln": 0.1, "sigma_ln": 0.2}) == LognormalFactor(0.1, 0.2)
    with pytest.raises(ValueError):
        factor_from_dict({"kind": "gamma", "a": 1})
    with pytest.raises(ValueError):
        factor_from_dict({"kind": "beta", "mu_ln": 0.1, "sigma_ln": 0.2})
    with pytest.raises(ValueError):
        factor_from_dict({"kind": "lognormal", "mean": 1.0})


def test_invalid_factors_rejected():
    with pytest.raises(ValueError):
        LognormalFactor(0.0, 0.0)
    with pytest.raises(ValueError):
        LognormalFactor(np.nan, 1.0)
    with pytest.raises(ValueError):
        BetaFactor(0.0, 1.0)


def test_family_round_trips():
    fam = numerical_example_prior()
    assert VariationalFamily.from_dict(fam.as_dict()) == fam
    back = fam.with_unconstrained(fam.to_unconstrained())
    np.testing.assert_allclose(back.hyperparameters(), fam.hyperparameters(), rtol=1e-15)
    assert fam.with_hyperparameters(fam.hyperparameters()) == fam
    np.testing.assert_array_equal(np.flatnonzero(fam.is_beta), [3, 6, 9])


def test_family_log_pdf_sums_factors():
    fam = numerical_example_prior()
    theta = fam.means()
    ref = sum(f.log_pdf(t) for f, t in zip(fam.factors, theta))
    assert fam.log_pdf(theta) == pytest.approx(ref, rel=1e-14)


def test_family_validation():
    with pytest.raises(ValueError):
        VariationalFamily(("a", "a"), (LognormalFactor(0, 1), LognormalFactor(0, 1)))
    with pytest.raises(ValueError):
        VariationalFamily(("a",), ())
    with pytest.raises(ValueError):
        numerical_example_prior().with_unconstrained(np.zeros(3))
