"""
Stochastic variational Bayes for circuit parameters.

The observation model is independent Gaussian noise with a shared standard
deviation ``sigma_n`` on the real and imaginary part of every impedance
point; ``sigma_n`` is a free parameter with its own factor.

The ELBO is estimated by Monte Carlo over pathwise samples from the
mean-field family and maximised with Adam over unconstrained
hyperparameters: ``(mu_ln, log sigma_ln)`` for lognormal factors and
``(log a, log b)`` for beta factors.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from . import probdist
from .ecm import (
    EcmParams,
    FrequencyGrid,
    _jacobian_core,
    impedance_batch,
    jacobian_batch,
    n_elements_for,
    n_params,
)
from .probdist import VariationalFamily
from .signal import ImpedanceSpectrum

log = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)

# (log_joint (S,), d log_joint / d theta (S, P)) for a batch theta (S, P)
Target = Callable[[np.ndarray], tuple]


class IdentifiabilityError(ValueError):
    """Fewer data points than free parameters."""


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"ELBO became non-finite ({value}) at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class Likelihood:
    spectrum: ImpedanceSpectrum
    n_elements: int = 3
    inductance: float = 0.0
    require_identifiable: bool = True

    def __post_init__(self):
        if self.n_elements < 1:
            raise ValueError("model order must be at least 1")
        if self.inductance < 0:
            raise ValueError("inductance must be non-negative")
        k = len(self.spectrum)
        if self.require_identifiable and k < n_params(self.n_elements):
            raise IdentifiabilityError(
                f"{k} impedance points cannot identify {n_params(self.n_elements)} parameters"
            )

    @property
    def n_params(self) -> int:
        return n_params(self.n_elements)


@dataclass(frozen=True)
class VbConfig:
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    mc_samples: int = 8
    min_iters: int = 8000
    max_iters: int = 35000
    convergence_window: int = 1000
    convergence_rel_change: float = 0.01
    band_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.adam_epsilon > 0:
            raise ValueError("adam_epsilon must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        if not (1 <= self.min_iters <= self.max_iters):
            raise ValueError("need 1 <= min_iters <= max_iters")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be positive")
        if not (0 < self.convergence_rel_change < 1):
            raise ValueError("convergence_rel_change must lie in (0, 1)")

    def with_paper_epsilon(self) -> "VbConfig":
        """Adam denominator guard equal to the learning rate."""
        return replace(self, adam_epsilon=self.learning_rate)


# -- log joint ---------------------------------------------------------------


class EcmTarget:
    """Log joint density of the circuit model and its gradient, batched."""

    def __init__(self, likelihood: Likelihood, prior: VariationalFamily):
        if len(prior) != likelihood.n_params:
            raise ValueError(
                f"prior has {len(prior)} factors, model needs {likelihood.n_params}"
            )
        spec = likelihood.spectrum
        self.omega = 2 * np.pi * spec.freqs_hz
        self.z_obs = spec.z
        self.k = spec.z.size
        self.inductance = likelihood.inductance
        self.is_beta = prior.is_beta
        self._log_jw = (np.log(self.omega) + 0.5j * np.pi)[:, None]
        self._z_l = 1j * self.omega * self.inductance
        self._ln_idx = np.flatnonzero(~self.is_beta)
        self._bt_idx = np.flatnonzero(self.is_beta)
        ln = [f for f in prior.factors if f.kind == "lognormal"]
        bt = [f for f in prior.factors if f.kind == "beta"]
        self._mu = np.array([f.mu_ln for f in ln])
        self._sigma = np.array([f.sigma_ln for f in ln])
        self._a = np.array([f.a for f in bt])
        self._b = np.array([f.b for f in bt])
        self._ln_const = -np.sum(np.log(self._sigma)) - 0.5 * LOG_2PI * len(ln)
        self._beta_const = -np.sum(special.betaln(self._a, self._b))
        # full-width prior coefficients: log p = c + sum(A log x + B log(1 - x) - zz^2 / 2)
        # with zz = (log x - M) * S, zero on the beta columns
        p = len(prior)
        self._coef_log = np.full(p, -1.0)
        self._coef_log[self._bt_idx] = self._a - 1.0
        self._coef_log1m = np.zeros(p)
        self._coef_log1m[self._bt_idx] = self._b - 1.0
        self._m = np.zeros(p)
        self._m[self._ln_idx] = self._mu
        self._s = np.zeros(p)
        self._s[self._ln_idx] = 1.0 / self._sigma
        self._beta_mask = self.is_beta.astype(float)

    def log_likelihood(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        r = self.z_obs - impedance_batch(theta, self.omega, self.inductance)
        sn = theta[:, -1]
        ss = np.sum(r.real**2 + r.imag**2, axis=-1)
        return -self.k * LOG_2PI - 2 * self.k * np.log(sn) - ss / (2 * sn * sn)

    def log_prior(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        x = theta[:, ~self.is_beta]
        y = theta[:, self.is_beta]
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
            zz = (lx - self._mu) / self._sigma
            lp = self._ln_const + np.sum(-lx - 0.5 * zz * zz, axis=-1)
            lp = lp + self._beta_const + np.sum(
                (self._a - 1) * np.log(y) + (self._b - 1) * np.log1p(-y), axis=-1
            )
        inside = np.all(x > 0, axis=-1) & np.all((y > 0) & (y < 1), axis=-1)
        return np.where(inside, lp, -np.inf)

    def log_joint(self, theta: np.ndarray) -> np.ndarray:
        lp = self.log_prior(theta)
        out = np.full(lp.shape, -np.inf)
        ok = np.isfinite(lp)
        if np.any(ok):
            out[ok] = lp[ok] + self.log_likelihood(np.atleast_2d(theta)[ok])
        return out

    def __call__(self, theta: np.ndarray):
        z, jac = _jacobian_core(theta, self._log_jw, self._z_l)
        r = self.z_obs - z
        sn = theta[:, -1]
        inv_var = 1.0 / (sn * sn)
        ss = np.add.reduce(r.real * r.real + r.imag * r.imag, axis=-1)
        ll = -self.k * LOG_2PI - 2 * self.k * np.log(sn) - 0.5 * ss * inv_var

        # prior terms over all columns at once; the beta mask keeps log1p finite
        lx = np.log(theta)
        one_m = 1.0 - theta * self._beta_mask
        zz = (lx - self._m) * self._s
        lp = (self._ln_const + self._beta_const) + np.add.reduce(
            self._coef_log * lx + self._coef_log1m * np.log(one_m) - 0.5 * zz * zz, axis=-1
        )
        grad = (self._coef_log - zz * self._s) / theta - self._coef_log1m / one_m
        # Re(conj(r) . dZ) summed over frequencies
        proj = np.matmul(r.conj()[:, None, :], jac)[:, 0, :].real
        grad[:, :-1] += proj * inv_var[:, None]
        grad[:, -1] += (ss * inv_var - 2 * self.k) / sn
        return ll + lp, grad


def log_joint(theta: EcmParams, likelihood: Likelihood, prior: VariationalFamily) -> float:
    """``log p(x | theta) + log p(theta)``; ``-inf`` outside the prior support."""
    if theta.n_elements != likelihood.n_elements:
        raise ValueError("parameter vector does not match the model order")
    return float(EcmTarget(likelihood, prior).log_joint(theta.to_vector()[None, :])[0])


# -- ELBO --------------------------------------------------------------------


@dataclass
class _Layout:
    is_beta: np.ndarray
    ln_idx: np.ndarray
    bt_idx: np.ndarray

    @property
    def n_ln(self) -> int:
        return self.ln_idx.size

    @property
    def n_beta(self) -> int:
        return self.bt_idx.size

    @classmethod
    def of(cls, family: VariationalFamily) -> "_Layout":
        is_beta = family.is_beta
        return cls(is_beta, np.flatnonzero(~is_beta), np.flatnonzero(is_beta))

    def draw(self, rng: np.random.Generator, n_samples: int):
        eps = rng.standard_normal((n_samples, self.n_ln))
        u = rng.random((n_samples, self.n_beta))
        return eps, u


def _elbo_unconstrained(eta: np.ndarray, layout: _Layout, target: Target, eps, u):
    """ELBO estimate and its gradient with respect to the unconstrained vector."""
    eta2 = eta.reshape(-1, 2)
    ln = layout.ln_idx
    bt = layout.bt_idx
    s = eps.shape[0]
    theta = np.empty((s, eta2.shape[0]))

    mu = eta2[ln, 0]
    log_sig = eta2[ln, 1]
    z = np.exp(log_sig) * eps
    x_ln = np.exp(mu + z)
    theta[:, ln] = x_ln
    if layout.n_beta:
        ab = np.exp(eta2[bt])
        a, b = ab[:, 0], ab[:, 1]
        x_b, dxa, dxb = probdist.beta_ppf_and_grad(u, a, b)
        theta[:, bt] = x_b
    lj, dlj = target(theta)

    grad = np.empty_like(eta2)
    # lognormal part: with log x = mu + sigma*eps the log q terms reduce to the
    # entropy gradient (1, 1) plus the (zero-mean) sigma*eps remainder
    gx = dlj[:, ln] * x_ln
    grad[ln, 0] = np.add.reduce(gx, axis=0) / s + 1.0
    grad[ln, 1] = np.add.reduce((gx + 1.0) * z, axis=0) / s + 1.0
    neg_lq = np.add.reduce(z + 0.5 * eps * eps, axis=None) + s * (
        np.add.reduce(mu + log_sig) + 0.5 * LOG_2PI * mu.size
    )
    if layout.n_beta:
        log_x = np.log(x_b)
        log_1mx = np.log1p(-x_b)
        am1, bm1 = a - 1.0, b - 1.0
        neg_lq -= np.add.reduce(am1 * log_x + bm1 * log_1mx, axis=None) - s * np.add.reduce(
            special.betaln(a, b)
        )
        df_b = dlj[:, bt] - am1 / x_b + bm1 / (1.0 - x_b)
        psi_a, psi_b, psi_ab = special.digamma(np.concatenate([a, b, a + b])).reshape(3, -1)
        grad[bt, 0] = a * (np.add.reduce(df_b * dxa - log_x, axis=0) / s + psi_a - psi_ab)
        grad[bt, 1] = b * (np.add.reduce(df_b * dxb - log_1mx, axis=0) / s + psi_b - psi_ab)
    return float((np.add.reduce(lj) + neg_lq) / s), grad.ravel()


def _to_natural_grad(family: VariationalFamily, grad_eta: np.ndarray) -> np.ndarray:
    # d/d sigma = d/d log sigma / sigma ; d/da = d/d log a / a ; d/db likewise
    g = grad_eta.reshape(-1, 2).copy()
    for j, f in enumerate(family.factors):
        if f.kind == "lognormal":
            g[j, 1] /= f.sigma_ln
        else:
            g[j, 0] /= f.a
            g[j, 1] /= f.b
    return g.ravel()


def elbo_estimate_target(
    family: VariationalFamily,
    target: Target,
    n_samples: int = 8,
    seed: int | np.random.Generator = 0,
    coords: str = "natural",
):
    """ELBO estimate and gradient for an arbitrary batched log-joint.

    ``coords="natural"`` differentiates with respect to ``(mu_ln, sigma_ln)``
    and ``(a, b)``; ``coords="unconstrained"`` with respect to the vector
    returned by :meth:`VariationalFamily.to_unconstrained`.
    """
    if n_samples < 1:
        raise ValueError("need at least one Monte Carlo sample")
    if coords not in ("natural", "unconstrained"):
        raise ValueError(f"unknown coordinate system {coords!r}")
    rng = np.random.default_rng(seed)
    layout = _Layout.of(family)
    eps, u = layout.draw(rng, n_samples)
    elbo, grad = _elbo_unconstrained(family.to_unconstrained(), layout, target, eps, u)
    if coords == "natural":
        grad = _to_natural_grad(family, grad)
    return elbo, grad


def elbo_estimate(
    family: VariationalFamily,
    likelihood: Likelihood,
    prior: VariationalFamily,
    n_samples: int = 8,
    seed: int | np.random.Generator = 0,
    coords: str = "natural",
):
    """Monte Carlo ELBO of the circuit posterior and its pathwise gradient.

    The estimate is the average of ``log p(x, theta_s) - log q(theta_s)`` over
    ``n_samples`` reparameterised draws; it is deterministic given ``seed``.
    """
    return elbo_estimate_target(family, EcmTarget(likelihood, prior), n_samples, seed, coords)


# -- Adam --------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def initial(cls, params) -> "AdamState":
        params = np.array(params, dtype=float)
        return cls(params, np.zeros_like(params), np.zeros_like(params))


def adam_step(state: AdamState, gradient, t: int, config: VbConfig) -> AdamState:
    """One Adam update. ``gradient`` is of the objective being *minimised*."""
    if t < 1:
        raise ValueError("Adam iterations are counted from 1")
    g = np.asarray(gradient, dtype=float)
    b1, b2 = config.beta1, config.beta2
    m = b1 * state.m + (1 - b1) * g
    v = b2 * state.v + (1 - b2) * (g * g)
    step = (config.learning_rate / (1 - b1**t)) * m
    params = state.params - step / (np.sqrt(v / (1 - b2**t)) + config.adam_epsilon)
    return AdamState(params, m, v)


# -- fitting -----------------------------------------------------------------


@dataclass
class Bands:
    """Per-frequency credible band of the impedance and the posterior-mean curve."""

    freqs_hz: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    quantiles: tuple[float, float]


@dataclass
class PosteriorReport:
    family: VariationalFamily
    n_elements: int
    inductance: float
    elbo_trace: np.ndarray
    mean_trace: np.ndarray
    spread_trace: np.ndarray
    n_iter: int
    stop_reason: str
    duration_s: float
    config: VbConfig
    bands: Optional[Bands] = None

    @property
    def names(self) -> tuple[str, ...]:
        return self.family.names

    @property
    def loss_trace(self) -> np.ndarray:
        return -self.elbo_trace

    def posterior_means(self) -> np.ndarray:
        return self.family.means()

    def posterior_params(self) -> EcmParams:
        return EcmParams.from_vector(self.posterior_means(), l=self.inductance)


def _moments_from_eta(eta: np.ndarray, is_beta: np.ndarray):
    """Means and standard deviations for unconstrained vectors of shape (..., 2P)."""
    eta2 = eta.reshape(eta.shape[:-1] + (-1, 2))
    p0, p1 = eta2[..., 0], np.exp(eta2[..., 1])
    ln = ~is_beta
    s2 = p1[..., ln] ** 2
    mean = np.empty(p0.shape)
    spread = np.empty(p0.shape)
    mean[..., ln] = np.exp(p0[..., ln] + 0.5 * s2)
    spread[..., ln] = mean[..., ln] * np.sqrt(np.expm1(s2))
    a, b = np.exp(p0[..., is_beta]), p1[..., is_beta]
    tot = a + b
    mean[..., is_beta] = a / tot
    spread[..., is_beta] = np.sqrt(a * b / (tot * tot * (tot + 1)))
    return mean, spread


def converged(elbo_trace: np.ndarray, t: int, config: VbConfig) -> bool:
    """Stopping rule evaluated after iteration ``t`` (1-based).

    Active once ``t >= min_iters + window``: compares the mean ELBO of the
    last window with that of the window before it.
    """
    w = config.convergence_window
    if t < config.min_iters + w or t < 2 * w:
        return False
    last = np.mean(elbo_trace[t - w : t])
    prev = np.mean(elbo_trace[t - 2 * w : t - w])
    denom = abs(prev) if prev != 0 else np.finfo(float).tiny
    return abs(last - prev) / denom < config.convergence_rel_change


def fit_target(
    target: Target,
    init: VariationalFamily,
    config: VbConfig,
    callback: Optional[Callable[[int, float, np.ndarray], None]] = None,
):
    """Adam ascent of the ELBO of an arbitrary target. Returns traces and the fitted family."""
    layout = _Layout.of(init)
    rng = np.random.default_rng(config.seed)
    state = AdamState.initial(init.to_unconstrained())
    elbo_trace = np.empty(config.max_iters)
    eta_trace = np.empty((config.max_iters, state.params.size))
    stop_reason = "max_iters"
    t = 0
    for t in range(1, config.max_iters + 1):
        eps, u = layout.draw(rng, config.mc_samples)
        # overflow shows up as a non-finite ELBO and is reported just below
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            elbo, grad = _elbo_unconstrained(state.params, layout, target, eps, u)
        if not (np.isfinite(elbo) and np.all(np.isfinite(grad))):
            raise DivergenceError(t, elbo)
        elbo_trace[t - 1] = elbo
        state = adam_step(state, -grad, t, config)
        eta_trace[t - 1] = state.params
        if callback is not None:
            callback(t, elbo, state.params)
        if converged(elbo_trace, t, config):
            stop_reason = "converged"
            break
    family = init.with_unconstrained(state.params)
    mean_trace, spread_trace = _moments_from_eta(eta_trace[:t], layout.is_beta)
    return family, elbo_trace[:t].copy(), mean_trace, spread_trace, stop_reason


def fit(
    likelihood: Likelihood,
    prior: VariationalFamily,
    init: VariationalFamily,
    config: VbConfig = VbConfig(),
    callback=None,
) -> PosteriorReport:
    """Fit the mean-field posterior of the circuit parameters."""
    if len(init) != likelihood.n_params:
        raise ValueError(f"initial family has {len(init)} factors, model needs {likelihood.n_params}")
    if list(init.is_beta) != list(prior.is_beta):
        raise ValueError("initial family and prior disagree on factor kinds")
    start = time.perf_counter()
    family, elbo, means, spreads, reason = fit_target(
        EcmTarget(likelihood, prior), init, config, callback
    )
    duration = time.perf_counter() - start
    log.info("VB stopped after %d iterations (%s) in %.2f s", elbo.size, reason, duration)
    report = PosteriorReport(
        family, likelihood.n_elements, likelihood.inductance, elbo, means, spreads,
        elbo.size, reason, duration, config,
    )
    report.bands = extract_bands(
        report, likelihood.n_elements, likelihood.spectrum.grid,
        n_samples=config.band_samples, seed=config.seed,
    )
    return report


def extract_bands(
    report: PosteriorReport | VariationalFamily,
    n_elements: int,
    grid: FrequencyGrid,
    n_samples: int = 1000,
    quantiles: tuple[float, float] = (0.025, 0.975),
    inductance: Optional[float] = None,
    seed: int = 0,
) -> Bands:
    """Credible band of the impedance from posterior parameter draws.

    Real and imaginary parts are summarised separately; ``lower`` and
    ``upper`` carry the two quantiles as ``re + 1j * im``.
    """
    family = report.family if isinstance(report, PosteriorReport) else report
    if inductance is None:
        inductance = report.inductance if isinstance(report, PosteriorReport) else 0.0
    if n_elements_for(len(family)) != n_elements:
        raise ValueError("family does not match the model order")
    rng = np.random.default_rng(seed)
    draws = family.sample(rng, n_samples)
    z = impedance_batch(draws, grid.omega, inductance)
    q = np.asarray(quantiles)
    re = np.quantile(z.real, q, axis=0)
    im = np.quantile(z.imag, q, axis=0)
    mean = impedance_batch(family.means(), grid.omega, inductance)
    return Bands(grid.freqs_hz.copy(), mean, re[0] + 1j * im[0], re[1] + 1j * im[1], tuple(quantiles))


def display_order(family: VariationalFamily) -> list[int]:
    """RQ element indices (0-based) sorted by time constant ``(R Q)^(1/alpha)``."""
    m = family.means()
    n = n_elements_for(m.size)
    tau = [(m[1 + 3 * i] * m[2 + 3 * i]) ** (1.0 / m[3 + 3 * i]) for i in range(n)]
    return [int(i) for i in np.argsort(tau, kind="stable")]
