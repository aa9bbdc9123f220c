import math

import numpy as np
import pytest
from scipy import optimize, special, stats

from conftest import one_rq_prior, one_rq_spectrum
from eis_bayes.ecm import EcmParams
from eis_bayes.mcmc import (
    McmcConfig,
    McmcDiagnosticError,
    UnconstrainedPosterior,
    diagnostics,
    effective_sample_size,
    run_chain,
    sample,
    sample_target,
    split_rhat,
    _workers,
)
from eis_bayes.probdist import VariationalFamily
from eis_bayes.vb import EcmTarget, Likelihood


def std_normal(z):
    return -0.5 * float(z @ z)


class PriorOnly:
    """Prior density in log/logit coordinates, including the transform Jacobian."""

    def __init__(self, family):
        self.family = family
        self.beta = family.is_beta

    def physical(self, z):
        return np.where(self.beta, special.expit(z), np.exp(z))

    def __call__(self, z):
        x = self.physical(z)
        y = x[self.beta]
        # far-out proposals round to the boundary and are simply rejected
        with np.errstate(divide="ignore"):
            log_jac = np.sum(z[~self.beta]) + np.sum(np.log(y) + np.log1p(-y))
        return float(self.family.log_pdf(x) + log_jac)


def test_standard_normal_target():
    res = sample_target(std_normal, np.zeros(1), McmcConfig(n_iters=100_000, seed=1))
    x = res.flat[:, 0]
    assert abs(x.mean()) < 0.02
    assert 0.95 <= x.var() <= 1.05
    assert res.ok
    assert np.all((res.acceptance > 0.15) & (res.acceptance < 0.35))


def test_prior_alone_moments():
    prior = one_rq_prior()
    fam = VariationalFamily(prior.names[:4], prior.factors[:4])
    post = PriorOnly(fam)
    init = np.log(fam.means())
    init[3] = special.logit(fam.means()[3])
    res = sample_target(post, init, McmcConfig(n_iters=200_000, seed=2), fam.names, post.physical)
    assert res.flat.shape[0] >= 100_000
    np.testing.assert_allclose(res.means(), fam.means(), rtol=0.02)
    np.testing.assert_allclose(res.variances(), fam.variances(), rtol=0.02)


def test_detailed_balance_histogram():
    # bimodal 1-d target; thin to roughly independent draws before the chi-square test
    w, m1, m2, s1, s2 = 0.3, -1.5, 1.0, 0.5, 0.8

    def logpdf(z):
        return float(np.logaddexp(math.log(w) + stats.norm.logpdf(z[0], m1, s1),
                                  math.log(1 - w) + stats.norm.logpdf(z[0], m2, s2)))

    res = sample_target(logpdf, np.zeros(1), McmcConfig(n_iters=60_000, seed=3))
    ess = res.ess[0]
    per_chain = res.draws.shape[1]
    thin = int(math.ceil(res.draws.shape[0] * per_chain / ess))
    x = res.draws[:, ::thin, 0].ravel()
    edges = np.concatenate([[-np.inf], np.linspace(-3.0, 3.0, 13), [np.inf]])
    cdf = w * stats.norm.cdf(edges, m1, s1) + (1 - w) * stats.norm.cdf(edges, m2, s2)
    expected = np.diff(cdf) * x.size
    observed = np.histogram(x, edges)[0]
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_posterior_mean_matches_importance_sampling(one_rq_runs):
    lik = Likelihood(one_rq_spectrum(), 1)
    prior = one_rq_prior()
    post = UnconstrainedPosterior(lik, prior)
    target = EcmTarget(lik, prior)

    def log_post_z(z):
        return post(z)

    # broad proposal: multivariate t around the mode with twice the Laplace covariance
    z0 = post.to_unconstrained(prior.means())
    mode = optimize.minimize(lambda z: -log_post_z(z), z0, method="Nelder-Mead",
                             options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 20_000}).x
    h = 1e-4
    d = mode.size
    hess = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            e_i, e_j = np.eye(d)[i] * h, np.eye(d)[j] * h
            hess[i, j] = (log_post_z(mode + e_i + e_j) - log_post_z(mode + e_i - e_j)
                          - log_post_z(mode - e_i + e_j) + log_post_z(mode - e_i - e_j)) / (4 * h * h)
    cov = 2.0 * np.linalg.inv(-hess)
    proposal = stats.multivariate_t(loc=mode, shape=cov, df=5)

    rng = np.random.default_rng(99)
    num = np.zeros(d)
    log_w_all, theta_all = [], []
    for _ in range(10):
        z = proposal.rvs(size=100_000, random_state=rng)
        theta = post.to_physical(z)
        beta = post.is_beta
        y = theta[:, beta]
        log_jac = np.sum(z[:, ~beta], axis=1) + np.sum(np.log(y) + np.log1p(-y), axis=1)
        log_w_all.append(target.log_joint(theta) + log_jac - proposal.logpdf(z))
        theta_all.append(theta)
    log_w = np.concatenate(log_w_all)
    theta = np.concatenate(theta_all)
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    is_mean = w @ theta
    is_ess = 1.0 / np.sum(w * w)
    assert is_ess > 1e5

    chains = one_rq_runs["chains"]
    assert np.all(np.abs(chains.means() - is_mean) < 3 * chains.mcse())


def test_draws_are_valid_circuit_parameters(one_rq_runs):
    chains = one_rq_runs["chains"]
    assert chains.ok, chains.problems
    assert np.all(chains.rhat < 1.1)
    flat = chains.flat
    alpha = flat[:, 3]
    assert np.all((alpha > 0) & (alpha < 1))
    assert np.all(flat[:, [0, 1, 2, 4]] > 0)
    for row in flat[:: max(1, flat.shape[0] // 500)]:
        EcmParams.from_vector(row)


def test_identical_constant_chains_are_degenerate():
    chains = [np.ones((100, 2)), np.ones((100, 2))]
    summary = diagnostics(chains, ["a", "b"])
    assert np.all(summary.degenerate)
    assert summary.as_dict()["a"]["rhat"] is None


def test_independent_gaussian_chains_have_low_rhat():
    res = sample_target(std_normal, np.zeros(2), McmcConfig(n_iters=40_000, n_chains=2, seed=5))
    assert np.all(res.rhat < 1.01)


def test_rhat_flags_shifted_chains():
    rng = np.random.default_rng(6)
    chains = rng.standard_normal((2, 1000, 1))
    chains[1] += 3.0
    assert split_rhat(chains)[0] > 1.1


def test_ess_of_iid_chain():
    x = np.random.default_rng(7).standard_normal((4, 5000, 1))
    ess = effective_sample_size(x)[0]
    assert abs(ess / 20_000 - 1) < 0.1


def test_ess_of_ar1_chain():
    rho = 0.8
    rng = np.random.default_rng(8)
    x = np.empty((4, 20_000))
    x[:, 0] = rng.standard_normal(4) / math.sqrt(1 - rho**2)
    e = rng.standard_normal((4, 20_000))
    for t in range(1, x.shape[1]):
        x[:, t] = rho * x[:, t - 1] + e[:, t]
    ess = effective_sample_size(x[..., None])[0]
    expected = x.size * (1 - rho) / (1 + rho)
    assert abs(ess / expected - 1) < 0.15


def test_separated_modes_fail_diagnostics():
    def bimodal(z):
        return float(np.logaddexp(-0.5 * (z[0] - 10) ** 2, -0.5 * (z[0] + 10) ** 2))

    cfg = McmcConfig(n_iters=4000, n_chains=4, seed=0, init_scale=1.0)
    res = sample_target(bimodal, np.zeros(1), cfg)
    assert not res.ok
    assert any("R-hat" in p for p in res.problems)
    with pytest.raises(McmcDiagnosticError) as info:
        sample_target(bimodal, np.zeros(1), cfg, check=True)
    assert info.value.result.problems == res.problems


def test_chain_is_reproducible():
    cfg = McmcConfig(n_iters=2000, seed=0)
    a, acc_a = run_chain(std_normal, np.zeros(3), cfg, 11)
    b, acc_b = run_chain(std_normal, np.zeros(3), cfg, 11)
    np.testing.assert_array_equal(a, b)
    assert acc_a == acc_b


def test_parallel_chains_match_serial():
    lik = Likelihood(one_rq_spectrum(), 1)
    prior = one_rq_prior()
    serial = sample(lik, prior, McmcConfig(n_iters=3000, seed=4, workers=1))
    parallel = sample(lik, prior, McmcConfig(n_iters=3000, seed=4, workers=2))
    np.testing.assert_array_equal(serial.draws, parallel.draws)
    np.testing.assert_array_equal(serial.acceptance, parallel.acceptance)


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.setenv("EIS_BAYES_THREADS", "3")
    assert _workers(McmcConfig()) == 3
    assert _workers(McmcConfig(workers=1)) == 1
    monkeypatch.delenv("EIS_BAYES_THREADS")
    assert _workers(McmcConfig()) == 1


@pytest.mark.parametrize(
    "kw",
    [dict(burn_in=0.0), dict(burn_in=1.0), dict(n_chains=1), dict(target_accept=1.0),
     dict(n_iters=3), dict(adapt_window=0)],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        McmcConfig(**kw)


def test_rejects_non_finite_start():
    lik = Likelihood(one_rq_spectrum(), 1)
    prior = one_rq_prior()
    bad = prior.means()
    bad[3] = 1.0
    with pytest.raises(ValueError):
        sample(lik, prior, McmcConfig(n_iters=100), init=bad)
    with pytest.raises(ValueError):
        run_chain(lambda z: -np.inf, np.zeros(1), McmcConfig(n_iters=100), 0)


def test_unconstrained_transform_round_trip():
    post = UnconstrainedPosterior(Likelihood(one_rq_spectrum(), 1), one_rq_prior())
    theta = np.array([1.1, 2.3, 0.4, 0.77, 0.02])
    np.testing.assert_allclose(post.to_physical(post.to_unconstrained(theta)), theta, rtol=1e-14)
    assert post(np.full(5, 600.0)) == -np.inf
