"""
Adaptive random-walk Metropolis sampler used as the posterior oracle.

Sampling happens in unconstrained coordinates (``log`` for positive
parameters, ``logit`` for the fractional orders) with the log-Jacobian of
the transform added to the target. During burn-in the diagonal proposal
variances track the chain's empirical variances and a Robbins-Monro global
scale steers the acceptance rate; both are frozen afterwards so that the
retained segment is a plain Metropolis chain.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .ecm import impedance_batch
from .probdist import VariationalFamily
from .vb import EcmTarget, Likelihood

LogDensity = Callable[[np.ndarray], float]


class McmcDiagnosticError(RuntimeError):
    def __init__(self, result: "ChainResult"):
        super().__init__("; ".join(result.problems))
        self.result = result


@dataclass(frozen=True)
class McmcConfig:
    n_iters: int = 200_000
    burn_in: float = 0.5
    target_accept: float = 0.234
    adapt_window: int = 100
    n_chains: int = 4
    seed: int = 0
    init_scale: float = 0.01
    workers: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.burn_in < 1:
            raise ValueError("burn_in must lie in (0, 1)")
        if self.n_chains < 2:
            raise ValueError("at least two chains are needed for R-hat")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.adapt_window < 1 or self.n_iters < 4:
            raise ValueError("n_iters and adapt_window are too small")
        if self.n_burn < 1 or self.n_burn >= self.n_iters:
            raise ValueError("burn-in leaves no retained draws")

    @property
    def n_burn(self) -> int:
        return int(self.n_iters * self.burn_in)


@dataclass
class Summary:
    names: tuple[str, ...]
    rhat: np.ndarray
    ess: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    degenerate: np.ndarray

    def as_dict(self) -> dict:
        out = {}
        for j, n in enumerate(self.names):
            out[n] = {
                "rhat": _json_float(self.rhat[j]),
                "ess": _json_float(self.ess[j]),
                "mean": float(self.mean[j]),
                "variance": float(self.variance[j]),
                "degenerate": bool(self.degenerate[j]),
            }
        return out


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class ChainResult:
    """Retained draws of all chains, in physical units."""

    names: tuple[str, ...]
    draws: np.ndarray  # (n_chains, n_keep, P)
    acceptance: np.ndarray  # post-adaptation, per chain
    rhat: np.ndarray
    ess: np.ndarray
    duration_s: float = 0.0
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    @property
    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def means(self) -> np.ndarray:
        return self.flat.mean(axis=0)

    def variances(self) -> np.ndarray:
        return self.flat.var(axis=0, ddof=1)

    def mcse(self) -> np.ndarray:
        """Monte Carlo standard error of the posterior means."""
        return np.sqrt(self.variances() / self.ess)

    def chains(self) -> list[np.ndarray]:
        return [c for c in self.draws]


# -- diagnostics -------------------------------------------------------------


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance along axis 0 for every column, via FFT."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=0)
    acov = np.fft.irfft(f * np.conj(f), size, axis=0)[:n]
    return acov / n


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-R-hat per parameter; ``chains`` has shape (m, n, P)."""
    m, n, p = chains.shape
    half = n // 2
    split = np.concatenate([chains[:, :half], chains[:, n - half :]], axis=0)
    means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean(axis=0)
    b = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * w + b / half
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / w)
    return np.where(w > 0, rhat, np.nan)


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    m, n, p = chains.shape
    acov = np.stack([_autocov(c) for c in chains])  # (m, n, P)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean(axis=0)
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus = var_plus + chains.mean(axis=1).var(axis=0, ddof=1)
    ess = np.empty(p)
    for j in range(p):
        if not var_plus[j] > 0:
            ess[j] = np.nan
            continue
        rho = 1.0 - (w[j] - acov[:, :, j].mean(axis=0)) / var_plus[j]
        rho[0] = 1.0
        tau = -1.0
        prev = np.inf
        for k in range(0, n - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            tau += 2 * pair
            prev = pair
        ess[j] = m * n / max(tau, 1.0 / math.log10(max(m * n, 10)))
    return ess


def diagnostics(chains, names: Optional[Sequence[str]] = None) -> Summary:
    """R-hat, ESS, mean and variance per parameter.

    ``chains`` is a list of equal-length (n, P) arrays, a (m, n, P) array or a
    list of :class:`ChainResult` (whose chains are pooled).
    """
    if isinstance(chains, ChainResult):
        chains = [chains]
    if len(chains) and isinstance(chains[0], ChainResult):
        names = names or chains[0].names
        arr = np.concatenate([c.draws for c in chains], axis=0)
    else:
        arr = np.stack([np.asarray(c, dtype=float) for c in chains])
        if arr.ndim == 2:
            arr = arr[:, :, None]
    if arr.shape[0] < 2:
        raise ValueError("diagnostics need at least two chains")
    p = arr.shape[-1]
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(p))
    rhat = split_rhat(arr)
    ess = effective_sample_size(arr)
    flat = arr.reshape(-1, p)
    degenerate = ~np.isfinite(rhat)
    return Summary(names, rhat, ess, flat.mean(axis=0), flat.var(axis=0, ddof=1), degenerate)


# -- sampler -----------------------------------------------------------------


def _updated_sd(sd: np.ndarray, var: np.ndarray) -> np.ndarray:
    # a window with few or no accepted moves has a near-zero empirical
    # variance; limit the shrink so the proposal cannot collapse to a point
    return np.maximum(np.sqrt(var), 0.1 * sd)


def run_chain(
    log_density: LogDensity,
    init: np.ndarray,
    config: McmcConfig,
    seed,
):
    """One adaptive Metropolis chain in unconstrained space.

    Returns ``(retained draws, post-adaptation acceptance rate)``.
    """
    rng = np.random.default_rng(seed)
    z = np.array(init, dtype=float)
    d = z.size
    lp = log_density(z)
    if not np.isfinite(lp):
        raise ValueError("log density is not finite at the initial point")
    n_burn = config.n_burn
    n_keep = config.n_iters - n_burn
    noise = rng.standard_normal((config.n_iters, d))
    log_u = np.log(rng.random(config.n_iters))
    log_scale = math.log(2.38 / math.sqrt(d))
    sd = np.full(d, config.init_scale)
    step = math.exp(log_scale) * sd
    # Welford accumulators, reset at doubling points so early transients fade
    w_n, w_mean, w_m2 = 0, np.zeros(d), np.zeros(d)
    next_reset = 2 * config.adapt_window
    out = np.empty((n_keep, d))
    accepted = 0
    for t in range(config.n_iters):
        prop = z + step * noise[t]
        lpp = log_density(prop)
        acc = lpp - lp >= log_u[t]
        if acc:
            z, lp = prop, lpp
        if t < n_burn:
            log_scale += ((1.0 if acc else 0.0) - config.target_accept) / (t + 1) ** 0.6
            w_n += 1
            delta = z - w_mean
            w_mean += delta / w_n
            w_m2 += delta * (z - w_mean)
            if t + 1 == next_reset:
                next_reset *= 2
                if w_n > 1:
                    sd = _updated_sd(sd, w_m2 / (w_n - 1))
                w_n, w_mean, w_m2 = 0, np.zeros(d), np.zeros(d)
            elif (t + 1) % config.adapt_window == 0 and w_n > config.adapt_window:
                sd = _updated_sd(sd, w_m2 / (w_n - 1))
            step = math.exp(log_scale) * sd
        else:
            out[t - n_burn] = z
            accepted += acc
    return out, accepted / n_keep


def _run_chain_args(args):
    return run_chain(*args)


def _chain_seeds(seed: int, n: int):
    return np.random.SeedSequence(seed).spawn(n)


def _workers(config: McmcConfig) -> int:
    if config.workers is not None:
        return max(1, config.workers)
    env = os.environ.get("EIS_BAYES_THREADS")
    return max(1, int(env)) if env else 1


def sample_target(
    log_density: LogDensity,
    init: np.ndarray,
    config: McmcConfig,
    names: Optional[Sequence[str]] = None,
    to_physical: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    check: bool = False,
) -> ChainResult:
    """Run ``config.n_chains`` independent chains on an unconstrained target."""
    start = time.perf_counter()
    seeds = _chain_seeds(config.seed, config.n_chains)
    jobs = [(log_density, np.asarray(init, dtype=float), config, s) for s in seeds]
    workers = min(_workers(config), config.n_chains)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_chain_args, jobs))
    else:
        results = [_run_chain_args(j) for j in jobs]
    draws = np.stack([r[0] for r in results])
    if to_physical is not None:
        draws = to_physical(draws)
    acceptance = np.array([r[1] for r in results])
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(draws.shape[-1]))
    summary = diagnostics(list(draws), names)
    problems = []
    for c, a in enumerate(acceptance):
        if a < 0.05 or a > 0.7:
            problems.append(f"chain {c} acceptance rate {a:.3f} outside [0.05, 0.7]")
    for n, r in zip(names, summary.rhat):
        if not np.isfinite(r) or r > 1.1:
            problems.append(f"R-hat of {n} is {r:.3f}")
    result = ChainResult(
        names, draws, acceptance, summary.rhat, summary.ess,
        time.perf_counter() - start, problems,
    )
    if check and problems:
        raise McmcDiagnosticError(result)
    return result


# |log x| or |logit x| beyond this is numerically meaningless for a circuit
_Z_LIMIT = 500.0


class UnconstrainedPosterior:
    """Circuit log posterior in unconstrained coordinates (picklable)."""

    def __init__(self, likelihood: Likelihood, prior: VariationalFamily):
        self.target = EcmTarget(likelihood, prior)
        self.is_beta = prior.is_beta
        self.positive = ~self.is_beta

    def to_physical(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        theta = np.empty_like(z)
        theta[..., self.positive] = np.exp(z[..., self.positive])
        theta[..., self.is_beta] = 1.0 / (1.0 + np.exp(-z[..., self.is_beta]))
        return theta

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        z = np.empty_like(theta)
        z[..., self.positive] = np.log(theta[..., self.positive])
        y = theta[..., self.is_beta]
        with np.errstate(divide="ignore"):
            z[..., self.is_beta] = np.log(y) - np.log1p(-y)
        return z

    def __call__(self, z: np.ndarray) -> float:
        if np.abs(z).max() > _Z_LIMIT:
            return -np.inf
        zb = z[self.is_beta]
        # log-Jacobian: sum of z for exp, log s(z) + log s(-z) for the logistic
        log_jac = np.sum(z[self.positive]) - np.sum(np.logaddexp(0, -zb) + np.logaddexp(0, zb))
        theta = self.to_physical(z)
        y = theta[self.is_beta]
        if np.any(y <= 0) or np.any(y >= 1):
            return -np.inf
        t = self.target
        x = theta[self.positive]
        lx = z[self.positive]
        zz = (lx - t._mu) / t._sigma
        lp = t._ln_const - np.sum(lx) - 0.5 * np.dot(zz, zz)
        lp += t._beta_const + np.dot(t._a - 1, np.log(y)) + np.dot(t._b - 1, np.log1p(-y))
        r = t.z_obs - impedance_batch(theta, t.omega, t.inductance)
        sn = x[-1]
        ss = np.dot(r.real, r.real) + np.dot(r.imag, r.imag)
        ll = -t.k * math.log(2 * math.pi) - 2 * t.k * math.log(sn) - 0.5 * ss / (sn * sn)
        return float(ll + lp + log_jac)


def sample(
    likelihood: Likelihood,
    prior: VariationalFamily,
    config: McmcConfig = McmcConfig(),
    init: Optional[np.ndarray] = None,
    check: bool = False,
) -> ChainResult:
    """Posterior draws of the circuit parameters, started at the prior means."""
    post = UnconstrainedPosterior(likelihood, prior)
    theta0 = prior.means() if init is None else np.asarray(init, dtype=float)
    z0 = post.to_unconstrained(theta0)
    if not np.isfinite(post(z0)):
        raise ValueError("log joint is not finite at the initial point")
    return sample_target(post, z0, config, prior.names, post.to_physical, check)
