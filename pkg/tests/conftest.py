import pytest

from eis_bayes.presets import ONE_RQ_EXAMPLE, one_rq_prior, one_rq_spectrum  # noqa: F401

ONE_RQ_TRUTH = ONE_RQ_EXAMPLE

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one summary line per acceptance criterion."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def one_rq():
    return one_rq_spectrum(), one_rq_prior()


@pytest.fixture(scope="session")
def one_rq_runs():
    """VB fit and the full-length MCMC oracle on the 1-RQ problem, each timed.

    Both run serially in this process so that their wall-clock times are
    comparable. Shared by the vb tests and the acceptance suite.
    """
    import time

    from eis_bayes.mcmc import McmcConfig, sample
    from eis_bayes.vb import Likelihood, VbConfig, fit

    spectrum, prior = one_rq_spectrum(), one_rq_prior()
    lik = Likelihood(spectrum, 1)
    start = time.perf_counter()
    report = fit(lik, prior, prior, VbConfig(seed=1))
    vb_s = time.perf_counter() - start
    start = time.perf_counter()
    chains = sample(lik, prior, McmcConfig(n_iters=200_000, n_chains=4, seed=0, workers=1))
    mcmc_s = time.perf_counter() - start
    return {"report": report, "chains": chains, "vb_s": vb_s, "mcmc_s": mcmc_s, "prior": prior}
