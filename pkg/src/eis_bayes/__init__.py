"""
Bayesian uncertainty quantification for fractional-order equivalent circuit
models of impedance spectra: stochastic variational inference with a
Metropolis MCMC oracle, plus a simulate -> wavelet-estimate -> fit pipeline.
"""
__version__ = "0.1.0"

from .ecm import EcmParams, FrequencyGrid, RqElement, impedance, impedance_jacobian, param_names
from .probdist import (
    BetaFactor,
    LognormalFactor,
    VariationalFamily,
    beta_from_moments,
    lognormal_from_moments,
)
from .signal import ImpedanceSpectrum, TimeSeriesRecord, average_spectra, estimate_impedance_cwt
from .vb import Likelihood, PosteriorReport, VbConfig, extract_bands, fit
from .mcmc import ChainResult, McmcConfig, sample

__all__ = [
    "BetaFactor",
    "ChainResult",
    "EcmParams",
    "FrequencyGrid",
    "ImpedanceSpectrum",
    "Likelihood",
    "LognormalFactor",
    "McmcConfig",
    "PosteriorReport",
    "RqElement",
    "TimeSeriesRecord",
    "VariationalFamily",
    "VbConfig",
    "average_spectra",
    "beta_from_moments",
    "estimate_impedance_cwt",
    "extract_bands",
    "fit",
    "impedance",
    "impedance_jacobian",
    "lognormal_from_moments",
    "param_names",
    "sample",
]
