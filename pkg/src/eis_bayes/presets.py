"""Reference parameter sets, priors and noise levels used by the experiments."""
from __future__ import annotations

import math

import numpy as np

from .ecm import EcmParams, FrequencyGrid, RqElement, impedance, param_names
from .probdist import (
    BetaFactor,
    LognormalFactor,
    VariationalFamily,
    beta_from_moments,
    lognormal_from_moments,
)
from .signal import ImpedanceSpectrum

# simulated three-arc stack
NUMERICAL_EXAMPLE = EcmParams(
    r_s=3.0,
    elements=(
        RqElement(1.0, 0.1, 0.88),
        RqElement(2.0, 5.0, 0.82),
        RqElement(3.0, 150.0, 0.99),
    ),
    l=100e-9,
    noise_scale=1e-3,
)

# (current std [A], voltage std [V]) per simulated measurement
NOISE_LEVELS = {
    1: (0.0, 0.0),
    2: (0.00005, 0.001),
    3: (0.05, 0.05),
}

# broad default for the observation-noise scale, in ohm
DEFAULT_NOISE_PRIOR = LognormalFactor(-4.0, 2.0)


def numerical_example_prior(noise_prior: LognormalFactor = DEFAULT_NOISE_PRIOR) -> VariationalFamily:
    """Variational starting distributions of the simulated three-arc example."""
    r = LognormalFactor(1.59, 0.20)
    alpha = BetaFactor(13.91, 5.68)
    factors = [
        LognormalFactor(0.84, 0.39),
        r, LognormalFactor(-0.35, 0.83), alpha,
        r, LognormalFactor(1.96, 0.83), alpha,
        r, LognormalFactor(4.99, 0.55), alpha,
        noise_prior,
    ]
    return VariationalFamily(tuple(param_names(3)), tuple(factors))


def stack_prior(noise_prior: LognormalFactor = LognormalFactor(-9.0, 2.0)) -> VariationalFamily:
    """Variational starting distributions used for the measured 6-cell stack."""
    r = LognormalFactor(-8.41, 1.27)
    alpha = BetaFactor(12.0, 3.0)
    factors = [
        LognormalFactor(-5.86, 0.32),
        r, LognormalFactor(-2.31, 2.14), alpha,
        r, LognormalFactor(3.57, 0.83), alpha,
        r, LognormalFactor(6.20, 0.20), alpha,
        noise_prior,
    ]
    return VariationalFamily(tuple(param_names(3)), tuple(factors))


# single-arc problem small enough for long MCMC runs
ONE_RQ_EXAMPLE = EcmParams(1.0, (RqElement(2.0, 0.5, 0.85),), noise_scale=0.02)


def one_rq_spectrum(seed: int = 7, noise: float = 0.02) -> ImpedanceSpectrum:
    """Single-arc spectrum on 31 log-spaced points with complex Gaussian noise of std ``noise``."""
    grid = FrequencyGrid.logspace(1e-3, 1e3, 5)
    rng = np.random.default_rng(seed)
    z = impedance(ONE_RQ_EXAMPLE, grid)
    z = z + noise * (rng.standard_normal(len(grid)) + 1j * rng.standard_normal(len(grid)))
    return ImpedanceSpectrum(grid.freqs_hz, z)


def one_rq_prior() -> VariationalFamily:
    """Moment-matched prior of the single-arc problem, centred off the truth."""
    return VariationalFamily(tuple(param_names(1)), (
        lognormal_from_moments(1.2, 0.25),
        lognormal_from_moments(2.5, 1.0),
        lognormal_from_moments(0.6, 0.1),
        beta_from_moments(0.8, 0.01),
        LognormalFactor(math.log(0.05), 1.0),
    ))
