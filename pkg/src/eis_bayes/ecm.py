"""
Fractional-order equivalent circuit model.

The circuit is a series resistance ``R_s``, a series inductance ``L`` and a
chain of ``N`` RQ elements (a resistance in parallel with a constant-phase
element)::

    Z(w) = R_s + sum_i R_i / ((j w)^alpha_i Q_i R_i + 1) + j w L

``(j w)^alpha`` is taken on the principal branch: magnitude ``w^alpha`` and
phase ``alpha * pi / 2``.

Free parameters are ordered ``R_s, R_1, Q_1, alpha_1, ..., R_N, Q_N,
alpha_N, sigma_n``; ``L`` is a fixed configuration value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HALF_PI = 0.5 * np.pi


@dataclass(frozen=True)
class RqElement:
    """Parallel R and constant-phase element."""

    r: float
    q: float
    alpha: float

    def __post_init__(self):
        if not (self.r > 0 and np.isfinite(self.r)):
            raise ValueError(f"RQ resistance must be positive, got {self.r}")
        if not (self.q > 0 and np.isfinite(self.q)):
            raise ValueError(f"RQ Q must be positive, got {self.q}")
        if not (0 < self.alpha <= 1):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def time_constant(self) -> float:
        """Characteristic time ``(R Q)^(1/alpha)`` in seconds."""
        return (self.r * self.q) ** (1.0 / self.alpha)


@dataclass(frozen=True)
class EcmParams:
    """One concrete parameter vector of the circuit."""

    r_s: float
    elements: tuple[RqElement, ...]
    l: float = 0.0
    noise_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if not (self.r_s > 0 and np.isfinite(self.r_s)):
            raise ValueError(f"R_s must be positive, got {self.r_s}")
        if not (self.noise_scale > 0 and np.isfinite(self.noise_scale)):
            raise ValueError(f"noise_scale must be positive, got {self.noise_scale}")
        if not (self.l >= 0 and np.isfinite(self.l)):
            raise ValueError(f"L must be non-negative, got {self.l}")
        if len(self.elements) < 1:
            raise ValueError("at least one RQ element is required")

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def dc_resistance(self) -> float:
        return self.r_s + sum(e.r for e in self.elements)

    def to_vector(self) -> np.ndarray:
        """Free parameters as a flat vector (see :func:`param_names`)."""
        vec = [self.r_s]
        for e in self.elements:
            vec.extend((e.r, e.q, e.alpha))
        vec.append(self.noise_scale)
        return np.asarray(vec, dtype=float)

    @classmethod
    def from_vector(cls, theta: Sequence[float], l: float = 0.0) -> "EcmParams":
        theta = np.asarray(theta, dtype=float)
        n = n_elements_for(theta.size)
        elements = tuple(
            RqElement(theta[1 + 3 * i], theta[2 + 3 * i], theta[3 + 3 * i]) for i in range(n)
        )
        return cls(float(theta[0]), elements, l=l, noise_scale=float(theta[-1]))


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing positive frequencies in Hz."""

    freqs_hz: np.ndarray = field(repr=False)

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=float).ravel()
        if f.size == 0:
            raise ValueError("frequency grid is empty")
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            raise ValueError("frequencies must be finite and positive")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        f.setflags(write=False)
        object.__setattr__(self, "freqs_hz", f)

    @classmethod
    def logspace(cls, f_min: float = 1e-4, f_max: float = 1e4, points_per_decade: int = 6):
        n = int(round(np.log10(f_max / f_min) * points_per_decade)) + 1
        return cls(np.logspace(np.log10(f_min), np.log10(f_max), n))

    @property
    def omega(self) -> np.ndarray:
        return 2 * np.pi * self.freqs_hz

    def __len__(self):
        return self.freqs_hz.size


def param_names(n_elements: int) -> list[str]:
    names = ["R_s"]
    for i in range(1, n_elements + 1):
        names += [f"R_{i}", f"Q_{i}", f"alpha_{i}"]
    names.append("sigma_n")
    return names


def n_params(n_elements: int) -> int:
    return 3 * n_elements + 2


def n_elements_for(n_free: int) -> int:
    n, rem = divmod(n_free - 2, 3)
    if rem or n < 1:
        raise ValueError(f"{n_free} is not a valid free-parameter count (3N+2)")
    return n


def is_fraction_param(n_elements: int) -> np.ndarray:
    """Boolean mask over the free parameters marking the alpha entries."""
    mask = np.zeros(n_params(n_elements), dtype=bool)
    mask[3:-1:3] = True
    return mask


def _jw_alpha(omega, alpha):
    # principal branch: exp(alpha * (ln w + j pi/2))
    log_jw = np.log(omega) + 1j * HALF_PI
    return np.exp(alpha * log_jw), log_jw


def impedance_batch(theta: np.ndarray, omega: np.ndarray, l: float = 0.0) -> np.ndarray:
    """Impedance for a batch of free-parameter vectors.

    Parameters
    ----------
    theta : ndarray, shape (..., 3N+2)
        Free parameters (the trailing ``sigma_n`` is ignored).
    omega : ndarray, shape (K,)
        Angular frequencies in rad/s.
    l : float
        Series inductance in henry.

    Returns
    -------
    ndarray, shape (..., K), complex
    """
    theta = np.asarray(theta, dtype=float)
    r_s = theta[..., 0:1]
    r = theta[..., 1:-1:3][..., None, :]
    q = theta[..., 2:-1:3][..., None, :]
    alpha = theta[..., 3:-1:3][..., None, :]
    jwa, _ = _jw_alpha(omega[:, None], alpha)
    terms = r / (jwa * q * r + 1.0)
    return r_s + terms.sum(axis=-1) + 1j * omega * l


def jacobian_batch(theta: np.ndarray, omega: np.ndarray, l: float = 0.0):
    """Impedance and its partials with respect to the circuit parameters.

    Returns ``(z, jac)`` where ``jac`` has shape ``(..., K, 3N+1)`` with
    columns ordered ``R_s, R_1, Q_1, alpha_1, ...``. ``sigma_n`` has no
    column since the impedance does not depend on it.
    """
    omega = np.asarray(omega, dtype=float)
    log_jw = (np.log(omega) + 1j * HALF_PI)[:, None]
    return _jacobian_core(np.asarray(theta, dtype=float), log_jw, 1j * omega * l)


def _jacobian_core(theta, log_jw, z_l):
    # log_jw has shape (K, 1); z_l is the inductive term per frequency
    r = theta[..., None, 1:-1:3]
    q = theta[..., None, 2:-1:3]
    jwa = np.exp(theta[..., None, 3:-1:3] * log_jw)
    inv = 1.0 / (jwa * (q * r) + 1.0)
    z = theta[..., 0:1] + (r * inv).sum(axis=-1) + z_l

    d_r = inv * inv
    d_q = (-(r * r) * jwa) * d_r
    jac = np.empty(z.shape + (theta.shape[-1] - 1,), dtype=complex)
    jac[..., 0] = 1.0
    jac[..., 1::3] = d_r
    jac[..., 2::3] = d_q
    jac[..., 3::3] = d_q * (q * log_jw)
    return z, jac


def impedance(params: EcmParams, grid: FrequencyGrid) -> np.ndarray:
    """Complex impedance in ohm at each grid frequency."""
    return impedance_batch(params.to_vector(), grid.omega, params.l)


def impedance_jacobian(params: EcmParams, grid: FrequencyGrid) -> np.ndarray:
    """Complex partials ``dZ/dtheta``, shape ``(K, 3N+1)``."""
    return jacobian_batch(params.to_vector(), grid.omega, params.l)[1]
