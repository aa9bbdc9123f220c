"""
Lognormal and Beta factors for priors and mean-field variational families.

Both factor kinds support moment matching, closed-form log-densities,
seeded sampling and pathwise (reparameterised) sampling with derivatives of
the sample with respect to the factor's hyperparameters:

* lognormal: ``x = exp(mu_ln + sigma_ln * eps)`` with ``eps ~ N(0, 1)``
* beta: ``x = F^-1(u; a, b)`` with ``u ~ U(0, 1)``; derivatives come from
  implicit differentiation of ``F(x; a, b) = u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import special

LOG_2PI = math.log(2 * math.pi)
# alpha support is open; inverse-CDF results are kept this far from 0 and 1
BETA_CLAMP = 1e-9
_FD_REL_STEP = 1e-5
_NEWTON_TOL = 1e-12
_MAX_NEWTON = 20
_MAX_BISECT = 200


class InversionError(RuntimeError):
    """Raised when the Beta inverse CDF fails to converge."""


@dataclass(frozen=True)
class LognormalFactor:
    mu_ln: float
    sigma_ln: float

    kind = "lognormal"

    def __post_init__(self):
        if not np.isfinite(self.mu_ln):
            raise ValueError(f"mu_ln must be finite, got {self.mu_ln}")
        if not (self.sigma_ln > 0 and np.isfinite(self.sigma_ln)):
            raise ValueError(f"sigma_ln must be positive, got {self.sigma_ln}")

    @property
    def mean(self) -> float:
        return math.exp(self.mu_ln + 0.5 * self.sigma_ln**2)

    @property
    def variance(self) -> float:
        s2 = self.sigma_ln**2
        return math.expm1(s2) * math.exp(2 * self.mu_ln + s2)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @classmethod
    def from_moments(cls, mean: float, variance: float) -> "LognormalFactor":
        return lognormal_from_moments(mean, variance)

    def log_pdf(self, x):
        return lognormal_log_pdf(x, self.mu_ln, self.sigma_ln)

    def sample(self, rng: np.random.Generator, size=None):
        return np.exp(self.mu_ln + self.sigma_ln * rng.standard_normal(size))

    def sample_pathwise(self, eps):
        """Return ``x`` and ``dx/d(mu_ln, sigma_ln)`` stacked on the last axis."""
        eps = np.asarray(eps, dtype=float)
        x = np.exp(self.mu_ln + self.sigma_ln * eps)
        return x, np.stack([x, x * eps], axis=-1)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "mu_ln": self.mu_ln, "sigma_ln": self.sigma_ln}


@dataclass(frozen=True)
class BetaFactor:
    a: float
    b: float

    kind = "beta"

    def __post_init__(self):
        for name, v in (("a", self.a), ("b", self.b)):
            if not (v > 0 and np.isfinite(v)):
                raise ValueError(f"Beta {name} must be positive, got {v}")

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    @property
    def variance(self) -> float:
        s = self.a + self.b
        return self.a * self.b / (s * s * (s + 1))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @classmethod
    def from_moments(cls, mean: float, variance: float) -> "BetaFactor":
        return beta_from_moments(mean, variance)

    def log_pdf(self, x):
        return beta_log_pdf(x, self.a, self.b)

    def cdf(self, x):
        return special.betainc(self.a, self.b, x)

    def ppf(self, u):
        return beta_ppf(u, self.a, self.b)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.beta(self.a, self.b, size)

    def sample_pathwise(self, u):
        """Return ``x = F^-1(u)`` and ``dx/d(a, b)`` stacked on the last axis."""
        u = np.asarray(u, dtype=float)
        a = np.full(u.shape, self.a)
        b = np.full(u.shape, self.b)
        x = beta_ppf(u, a, b)
        dxa, dxb = beta_ppf_grad(x, a, b)
        return x, np.stack([dxa, dxb], axis=-1)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}


Factor = Union[LognormalFactor, BetaFactor]


def lognormal_from_moments(mean: float, variance: float) -> LognormalFactor:
    """Lognormal factor with the given mean and variance."""
    if not (mean > 0 and np.isfinite(mean)):
        raise ValueError(f"lognormal mean must be positive, got {mean}")
    if not (variance > 0 and np.isfinite(variance)):
        raise ValueError(f"lognormal variance must be positive, got {variance}")
    ratio = variance / (mean * mean)
    # log1p keeps sigma accurate as variance -> 0
    s2 = math.log1p(ratio)
    return LognormalFactor(math.log(mean) - 0.5 * s2, math.sqrt(s2))


def beta_from_moments(mean: float, variance: float) -> BetaFactor:
    """Beta factor with the given mean and variance.

    Raises
    ------
    ValueError
        If ``mean`` is outside (0, 1) or ``variance >= mean * (1 - mean)``.
    """
    if not (0 < mean < 1):
        raise ValueError(f"beta mean must lie in (0, 1), got {mean}")
    if not variance > 0:
        raise ValueError(f"beta variance must be positive, got {variance}")
    bound = mean * (1 - mean)
    if variance >= bound:
        raise ValueError(f"beta variance {variance} must be below mean*(1-mean) = {bound}")
    k = bound / variance - 1
    return BetaFactor(mean * k, (1 - mean) * k)


def lognormal_log_pdf(x, mu_ln, sigma_ln):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log(x)
        z = (lx - mu_ln) / sigma_ln
        out = -lx - np.log(sigma_ln) - 0.5 * LOG_2PI - 0.5 * z * z
    return np.where(x > 0, out, -np.inf)


def beta_log_pdf(x, a, b):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - special.betaln(a, b)
    return np.where((x > 0) & (x < 1), out, -np.inf)


def log_pdf(factor: Factor, x):
    """Log-density of either factor kind; ``-inf`` outside the support."""
    return factor.log_pdf(x)


def sample_pathwise(factor: Factor, noise):
    """Pathwise sample and its derivatives with respect to the hyperparameters.

    ``noise`` is a standard-normal draw for lognormal factors and a
    uniform(0, 1) draw for beta factors.
    """
    return factor.sample_pathwise(noise)


def _bisect(u, a, b):
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        below = special.betainc(a, b, mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo < 1e-15):
            break
    return 0.5 * (lo + hi)


# CDF evaluation points: the unshifted (a, b) followed by the four central
# difference shifts used for dx/da and dx/db
_SHIFT_A = np.array([1.0, 1 + _FD_REL_STEP, 1 - _FD_REL_STEP, 1.0, 1.0])
_SHIFT_B = np.array([1.0, 1.0, 1.0, 1 + _FD_REL_STEP, 1 - _FD_REL_STEP])


def _newton_polish(u, a, b, x, with_fd=False):
    """Newton iterations on ``F(x) = u``.

    Returns ``x``, ``log f(x)`` and, if ``with_fd``, the CDF at ``x`` under the
    four shifted hyperparameter pairs (``None`` otherwise).
    """
    lbeta = special.betaln(a, b)
    n_eval = 5 if with_fd else 1
    lead = (n_eval,) + (1,) * np.ndim(x)
    a_eval = _SHIFT_A[:n_eval].reshape(lead) * a
    b_eval = _SHIFT_B[:n_eval].reshape(lead) * b
    for _ in range(_MAX_NEWTON):
        log_dens = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - lbeta
        f = special.betainc(a_eval, b_eval, x)
        step = (f[0] - u) * np.exp(-log_dens)
        if np.all(np.abs(step) <= _NEWTON_TOL * x):
            return x, log_dens, (f[1:] if with_fd else None)
        # a vanishing density (far tail) gives no usable step
        step = np.where(np.isfinite(step), step, 0.0)
        new = np.clip(x - step, BETA_CLAMP, 1 - BETA_CLAMP)
        # damp steps that would jump more than halfway to a boundary
        new = np.minimum(np.maximum(new, 0.5 * x), 0.5 * (1 + x))
        if np.array_equal(new, x):
            break
        x = new
    log_dens = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - lbeta
    f = special.betainc(a_eval, b_eval, x)
    clamped = (x <= BETA_CLAMP) | (x >= 1 - BETA_CLAMP)
    if np.any((np.abs(f[0] - u) > 1e-10) & ~clamped):
        raise InversionError("Beta inverse CDF did not converge")
    return x, log_dens, (f[1:] if with_fd else None)


def _ppf_start(u, a, b):
    x = special.betaincinv(a, b, u)
    if not np.isfinite(x).all():
        bad = ~np.isfinite(x)
        x = np.where(bad, _bisect(*np.broadcast_arrays(u, a, b)), x)
    return np.clip(x, BETA_CLAMP, 1 - BETA_CLAMP)


def _check_unit(u):
    if np.any((u < 0) | (u > 1)):
        raise ValueError("u must lie in [0, 1]")


def beta_ppf(u, a, b):
    """Inverse regularised incomplete beta, polished by Newton to 1e-12.

    The starting point comes from :func:`scipy.special.betaincinv`; entries
    where it is not finite fall back to bisection. Results are clamped to
    ``[BETA_CLAMP, 1 - BETA_CLAMP]``.
    """
    u, a, b = np.broadcast_arrays(
        np.asarray(u, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    _check_unit(u)
    x = _ppf_start(u, a, b)
    return _newton_polish(u, a, b, x)[0]


def _implicit_grad(x, a, b, log_dens, f_shift=None):
    if f_shift is None:
        lead = (4,) + (1,) * np.ndim(x)
        f_shift = special.betainc(_SHIFT_A[1:].reshape(lead) * a, _SHIFT_B[1:].reshape(lead) * b, x)
    # -dF/dtheta / f(x), with f(x) = exp(log_dens)
    scale = np.exp(-log_dens) / (2 * _FD_REL_STEP)
    dxa = (f_shift[1] - f_shift[0]) * scale / a
    dxb = (f_shift[3] - f_shift[2]) * scale / b
    # derivatives vanish where the sample sits on the clamp
    pinned = (x <= BETA_CLAMP) | (x >= 1 - BETA_CLAMP) | ~np.isfinite(scale)
    if pinned.any():
        dxa = np.where(pinned, 0.0, dxa)
        dxb = np.where(pinned, 0.0, dxb)
    return dxa, dxb


def beta_ppf_grad(x, a, b):
    """``dx/da`` and ``dx/db`` for ``x = F^-1(u; a, b)`` at fixed ``u``.

    Uses ``dx/dtheta = -(dF/dtheta) / f(x)`` with ``dF/da``, ``dF/db`` from
    central differences of the regularised incomplete beta.
    """
    x, a, b = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    return _implicit_grad(x, a, b, beta_log_pdf(x, a, b))


def beta_ppf_and_grad(u, a, b):
    """``F^-1(u; a, b)`` together with its derivatives in ``a`` and ``b``.

    ``u`` has shape ``(S, n)``; ``a`` and ``b`` have shape ``(n,)`` or ``(S, n)``.
    """
    _check_unit(u)
    x = _ppf_start(u, a, b)
    x, log_dens, f_shift = _newton_polish(u, a, b, x, with_fd=True)
    dxa, dxb = _implicit_grad(x, a, b, log_dens, f_shift)
    return x, dxa, dxb


def factor_from_dict(spec: dict) -> Factor:
    """Build a factor from ``{"kind": ..., ...}``.

    Accepts either the native hyperparameters (``mu_ln``/``sigma_ln`` or
    ``a``/``b``) or ``mean``/``variance`` for moment matching.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in ("lognormal", "beta"):
        raise ValueError(f"factor kind must be 'lognormal' or 'beta', got {kind!r}")
    keys = set(spec)
    if keys == {"mean", "variance"}:
        fn = lognormal_from_moments if kind == "lognormal" else beta_from_moments
        return fn(float(spec["mean"]), float(spec["variance"]))
    if kind == "lognormal" and keys == {"mu_ln", "sigma_ln"}:
        return LognormalFactor(float(spec["mu_ln"]), float(spec["sigma_ln"]))
    if kind == "beta" and keys == {"a", "b"}:
        return BetaFactor(float(spec["a"]), float(spec["b"]))
    raise ValueError(f"unrecognised {kind} factor fields: {sorted(keys)}")


@dataclass(frozen=True)
class VariationalFamily:
    """Mean-field family: independent named factors, one per free parameter."""

    names: tuple[str, ...]
    factors: tuple[Factor, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "factors", tuple(self.factors))
        if len(self.names) != len(self.factors):
            raise ValueError("names and factors differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("factor names must be unique")

    def __len__(self):
        return len(self.factors)

    def __getitem__(self, name: str) -> Factor:
        return self.factors[self.names.index(name)]

    @property
    def is_beta(self) -> np.ndarray:
        return np.array([f.kind == "beta" for f in self.factors])

    def means(self) -> np.ndarray:
        return np.array([f.mean for f in self.factors])

    def variances(self) -> np.ndarray:
        return np.array([f.variance for f in self.factors])

    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances())

    def log_pdf(self, theta) -> np.ndarray:
        """Joint log-density summed over factors; ``theta`` has shape (..., P)."""
        theta = np.asarray(theta, dtype=float)
        total = np.zeros(theta.shape[:-1])
        for j, f in enumerate(self.factors):
            total = total + f.log_pdf(theta[..., j])
        return total

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty((n, len(self)))
        for j, f in enumerate(self.factors):
            out[:, j] = f.sample(rng, n)
        return out

    def hyperparameters(self) -> np.ndarray:
        """Natural hyperparameters ``(mu_ln, sigma_ln)`` or ``(a, b)`` per factor, flattened."""
        out = []
        for f in self.factors:
            out.extend((f.mu_ln, f.sigma_ln) if f.kind == "lognormal" else (f.a, f.b))
        return np.asarray(out, dtype=float)

    def to_unconstrained(self) -> np.ndarray:
        """``(mu_ln, log sigma_ln)`` or ``(log a, log b)`` per factor, flattened."""
        out = []
        for f in self.factors:
            if f.kind == "lognormal":
                out.extend((f.mu_ln, math.log(f.sigma_ln)))
            else:
                out.extend((math.log(f.a), math.log(f.b)))
        return np.asarray(out, dtype=float)

    def with_unconstrained(self, eta: Sequence[float]) -> "VariationalFamily":
        eta = np.asarray(eta, dtype=float)
        if eta.size != 2 * len(self):
            raise ValueError("unconstrained vector has the wrong length")
        factors = []
        for j, f in enumerate(self.factors):
            p0, p1 = float(eta[2 * j]), float(eta[2 * j + 1])
            if f.kind == "lognormal":
                factors.append(LognormalFactor(p0, math.exp(p1)))
            else:
                factors.append(BetaFactor(math.exp(p0), math.exp(p1)))
        return VariationalFamily(self.names, tuple(factors))

    def with_hyperparameters(self, lam: Sequence[float]) -> "VariationalFamily":
        lam = np.asarray(lam, dtype=float)
        factors = []
        for j, f in enumerate(self.factors):
            p0, p1 = float(lam[2 * j]), float(lam[2 * j + 1])
            factors.append(LognormalFactor(p0, p1) if f.kind == "lognormal" else BetaFactor(p0, p1))
        return VariationalFamily(self.names, tuple(factors))

    def as_dict(self) -> dict:
        return {name: f.as_dict() for name, f in zip(self.names, self.factors)}

    @classmethod
    def from_dict(cls, spec: dict) -> "VariationalFamily":
        names = tuple(spec)
        return cls(names, tuple(factor_from_dict(spec[n]) for n in names))
