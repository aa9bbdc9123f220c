"""
Measurement pipeline: galvanostatic time series through a known circuit,
Morlet-wavelet transfer-function estimation and spectra averaging.

Time series are simulated as periodic steady state: the clean voltage is the
inverse DFT of ``Z(w) I(w)`` on the record's DFT grid. Independent zero-mean
Gaussian noise is then added to each channel.

A wide band (e.g. 1e-4..1e4 Hz) cannot be covered by one record at desk
scale, so :func:`plan_records` splits the frequency grid into several
records, each with a sample rate and duration matched to its tones, the way
sweeping instruments do.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .ecm import EcmParams, FrequencyGrid, impedance_batch

CHANNELS = ("current", "voltage")


@dataclass(frozen=True)
class TimeSeriesRecord:
    samples: np.ndarray = field(repr=False)
    sample_rate_hz: float
    channel: str

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float).ravel()
        if x.size < 2:
            raise ValueError("a record needs at least two samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("record contains non-finite samples")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample rate must be positive")
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate_hz


@dataclass(frozen=True)
class ImpedanceSpectrum:
    freqs_hz: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    dispersion: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        f = FrequencyGrid(self.freqs_hz).freqs_hz
        z = np.asarray(self.z, dtype=complex).ravel()
        if z.shape != f.shape:
            raise ValueError("frequency and impedance arrays differ in length")
        if not np.all(np.isfinite(z)):
            raise ValueError("impedance contains non-finite values")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "z", z)
        if self.dispersion is not None:
            d = np.asarray(self.dispersion, dtype=float).ravel()
            if d.shape != f.shape:
                raise ValueError("dispersion length does not match frequencies")
            object.__setattr__(self, "dispersion", d)

    def __len__(self):
        return self.freqs_hz.size

    @property
    def grid(self) -> FrequencyGrid:
        return FrequencyGrid(self.freqs_hz)

    @classmethod
    def concatenate(cls, spectra: Sequence["ImpedanceSpectrum"]) -> "ImpedanceSpectrum":
        f = np.concatenate([s.freqs_hz for s in spectra])
        z = np.concatenate([s.z for s in spectra])
        order = np.argsort(f, kind="stable")
        disp = None
        if all(s.dispersion is not None for s in spectra):
            disp = np.concatenate([s.dispersion for s in spectra])[order]
        return cls(f[order], z[order], disp)


@dataclass(frozen=True)
class ExcitationSpec:
    """Current excitation.

    ``multisine`` places tones on the record's DFT bins, either at the
    explicit ``frequencies_hz`` or log-spaced between ``f_min`` and ``f_max``
    with random phases. ``drbs`` is a random binary sequence switching at
    ``clock_hz``. ``amplitude`` is the peak deviation from ``dc_offset``.
    """

    kind: str = "multisine"
    amplitude: float = 1.0
    dc_offset: float = 0.0
    frequencies_hz: Optional[tuple[float, ...]] = None
    f_min: float = 1e-2
    f_max: float = 1e1
    tones_per_decade: int = 3
    clock_hz: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("multisine", "drbs"):
            raise ValueError(f"excitation kind must be 'multisine' or 'drbs', got {self.kind!r}")
        if not self.amplitude > 0:
            raise ValueError("excitation amplitude must be positive")
        if self.frequencies_hz is not None:
            object.__setattr__(self, "frequencies_hz", tuple(float(f) for f in self.frequencies_hz))


@dataclass(frozen=True)
class SimulationConfig:
    params: EcmParams
    excitation: ExcitationSpec
    duration_s: float
    sample_rate_hz: float
    sigma_current: float = 0.0
    sigma_voltage: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.duration_s > 0 and self.sample_rate_hz > 0):
            raise ValueError("duration and sample rate must be positive")
        if self.sigma_current < 0 or self.sigma_voltage < 0:
            raise ValueError("noise levels must be non-negative")
        if self.n_samples < 2:
            raise ValueError("record would contain fewer than two samples")
        if self.excitation.kind == "multisine":
            f = self._requested_tones()
            lo, hi = 1.0 / self.duration_s, 0.5 * self.sample_rate_hz
            if np.any(f < lo) or np.any(f >= hi):
                raise ValueError(f"excitation tones must lie within [{lo:g}, {hi:g}) Hz")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def _requested_tones(self) -> np.ndarray:
        ex = self.excitation
        if ex.frequencies_hz is not None:
            return np.asarray(ex.frequencies_hz, dtype=float)
        n = int(round(math.log10(ex.f_max / ex.f_min) * ex.tones_per_decade)) + 1
        return np.logspace(math.log10(ex.f_min), math.log10(ex.f_max), n)

    def tone_bins(self) -> np.ndarray:
        """DFT bin indices of the multisine tones."""
        bins = np.unique(np.round(self._requested_tones() * self.n_samples / self.sample_rate_hz))
        return bins.astype(int)

    def excited_frequencies(self) -> np.ndarray:
        if self.excitation.kind != "multisine":
            raise ValueError("only multisine excitation has discrete tones")
        return self.tone_bins() * self.sample_rate_hz / self.n_samples


def _excitation(config: SimulationConfig, rng: np.random.Generator) -> np.ndarray:
    ex = config.excitation
    n = config.n_samples
    if ex.kind == "multisine":
        spec = np.zeros(n // 2 + 1, dtype=complex)
        bins = config.tone_bins()
        spec[bins] = np.exp(2j * np.pi * rng.random(bins.size))
        x = np.fft.irfft(spec, n)
    else:
        clock = ex.clock_hz or config.sample_rate_hz / 4
        hold = max(1, int(round(config.sample_rate_hz / clock)))
        levels = rng.integers(0, 2, size=-(-n // hold)) * 2.0 - 1.0
        x = np.repeat(levels, hold)[:n]
        x = x - x.mean()
    return ex.dc_offset + ex.amplitude * x / np.max(np.abs(x))


def _response(current: np.ndarray, params: EcmParams, sample_rate_hz: float) -> np.ndarray:
    n = current.size
    spec = np.fft.rfft(current)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate_hz)
    active = np.flatnonzero(np.abs(spec) > 1e-12 * np.abs(spec).max())
    active = active[active > 0]
    out = np.zeros_like(spec)
    out[0] = spec[0] * params.dc_resistance
    if active.size:
        z = impedance_batch(params.to_vector(), 2 * np.pi * freqs[active], params.l)
        out[active] = spec[active] * z
    if n % 2 == 0:
        # the Nyquist bin of a real signal must stay real
        out[-1] = out[-1].real
    return np.fft.irfft(out, n)


def simulate(config: SimulationConfig) -> tuple[TimeSeriesRecord, TimeSeriesRecord]:
    """Simulate measured current and voltage for one periodic record."""
    ss = np.random.SeedSequence(config.seed)
    exc_rng, cur_rng, volt_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    clean_current = _excitation(config, exc_rng)
    clean_voltage = _response(clean_current, config.params, config.sample_rate_hz)
    n = config.n_samples
    current = clean_current + config.sigma_current * cur_rng.standard_normal(n)
    voltage = clean_voltage + config.sigma_voltage * volt_rng.standard_normal(n)
    fs = config.sample_rate_hz
    return TimeSeriesRecord(current, fs, "current"), TimeSeriesRecord(voltage, fs, "voltage")


def _coi_samples(freq_hz: float, sample_rate_hz: float, omega0: float) -> int:
    scale_s = omega0 / (2 * np.pi * freq_hz)
    return int(math.ceil(math.sqrt(2.0) * scale_s * sample_rate_hz))


def estimate_impedance_cwt(
    current: TimeSeriesRecord,
    voltage: TimeSeriesRecord,
    freqs: FrequencyGrid | Sequence[float],
    morlet_omega0: float = 6.0,
    trim_coi: bool = True,
) -> ImpedanceSpectrum:
    """Transfer function ``voltage/current`` from Morlet wavelet coefficients.

    At each frequency the complex analytic Morlet transform of both channels
    is taken at scale ``omega0 / (2 pi f)``; the impedance is the ratio of
    the time-averaged cross term ``W_u conj(W_i)`` to ``|W_i|^2`` over the
    region outside the cone of influence. The dispersion is the standard
    deviation of the instantaneous ratio ``W_u / W_i`` over the same region.
    """
    if not isinstance(freqs, FrequencyGrid):
        freqs = FrequencyGrid(freqs)
    if len(current) != len(voltage):
        raise ValueError("current and voltage records differ in length")
    if current.sample_rate_hz != voltage.sample_rate_hz:
        raise ValueError("current and voltage records differ in sample rate")
    if current.channel != "current" or voltage.channel != "voltage":
        raise ValueError("expected a current record and a voltage record")
    i = current.samples - current.samples.mean()
    u = voltage.samples - voltage.samples.mean()
    if not np.any(i):
        raise ValueError("current channel carries no excitation")

    fs = current.sample_rate_hz
    n = i.size
    lo, hi = 1.0 / current.duration_s, 0.5 * fs
    f = freqs.freqs_hz
    if f[0] <= lo or f[-1] >= hi:
        raise ValueError(f"frequencies must lie within ({lo:g}, {hi:g}) Hz")

    spec_i = np.fft.fft(i)
    spec_u = np.fft.fft(u)
    omega = 2 * np.pi * np.fft.fftfreq(n, 1.0 / fs)
    positive = omega > 0
    z = np.empty(f.size, dtype=complex)
    disp = np.empty(f.size)
    for k, fk in enumerate(f):
        scale = morlet_omega0 / (2 * np.pi * fk)
        psi = np.where(positive, np.exp(-0.5 * (scale * omega - morlet_omega0) ** 2), 0.0)
        w_i = np.fft.ifft(spec_i * psi)
        w_u = np.fft.ifft(spec_u * psi)
        if trim_coi:
            c = _coi_samples(fk, fs, morlet_omega0)
            if n - 2 * c < 1:
                raise ValueError(f"record too short for {fk:g} Hz outside the cone of influence")
            w_i = w_i[c : n - c]
            w_u = w_u[c : n - c]
        power = np.sum(w_i.real**2 + w_i.imag**2)
        z[k] = np.sum(w_u * np.conj(w_i)) / power
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = w_u / w_i
        ratio = ratio[np.isfinite(ratio)]
        disp[k] = np.std(ratio) if ratio.size else np.inf
    return ImpedanceSpectrum(f, z, disp)


def average_spectra(spectra: Sequence[ImpedanceSpectrum]) -> ImpedanceSpectrum:
    """Pointwise complex mean; dispersion is the pointwise sample std."""
    spectra = list(spectra)
    if not spectra:
        raise ValueError("need at least one spectrum")
    f = spectra[0].freqs_hz
    for s in spectra[1:]:
        if s.freqs_hz.shape != f.shape or np.any(s.freqs_hz != f):
            raise ValueError("spectra are on different frequency grids")
    stack = np.stack([s.z for s in spectra])
    mean = stack.mean(axis=0)
    if len(spectra) > 1:
        disp = np.sqrt(np.sum(np.abs(stack - mean) ** 2, axis=0) / (len(spectra) - 1))
    else:
        disp = np.zeros(f.size)
    return ImpedanceSpectrum(f, mean, disp)


@dataclass(frozen=True)
class RecordPlan:
    """Duration, sample rate and tones of one record in a multi-record sweep."""

    duration_s: float
    sample_rate_hz: float
    tones_hz: tuple[float, ...]


def plan_records(
    f_min: float = 1e-4,
    f_max: float = 1e4,
    points_per_decade: int = 6,
    decades_per_record: float = 2.0,
    interleave: int = 2,
    cycles: float = 30.0,
    oversample: float = 10.0,
) -> list[RecordPlan]:
    """Split a log frequency grid into records a desk machine can simulate.

    Consecutive groups of ``decades_per_record`` decades share a record
    length; within a group, tones are interleaved over ``interleave``
    records so that neighbouring tones in one record are far apart relative
    to the Morlet bandwidth. Each record lasts ``cycles`` periods of its
    lowest tone and is sampled at ``oversample`` times its highest tone.
    """
    grid = FrequencyGrid.logspace(f_min, f_max, points_per_decade).freqs_hz
    per_group = max(1, int(round(decades_per_record * points_per_decade)))
    plans = []
    for start in range(0, grid.size, per_group):
        group = grid[start : start + per_group]
        for offset in range(min(interleave, group.size)):
            tones = group[offset::interleave]
            duration = cycles / tones[0]
            plans.append(RecordPlan(duration, oversample * tones[-1], tuple(tones)))
    return plans


def record_configs(
    params: EcmParams,
    plans: Sequence[RecordPlan],
    sigma_current: float = 0.0,
    sigma_voltage: float = 0.0,
    seed: int = 0,
    amplitude: float = 1.0,
    dc_offset: float = 0.0,
) -> list[SimulationConfig]:
    """One :class:`SimulationConfig` per planned record, with independent seeds."""
    seeds = np.random.SeedSequence(seed).generate_state(len(plans))
    out = []
    for plan, s in zip(plans, seeds):
        ex = ExcitationSpec("multisine", amplitude, dc_offset, frequencies_hz=plan.tones_hz)
        out.append(
            SimulationConfig(
                params, ex, plan.duration_s, plan.sample_rate_hz,
                sigma_current, sigma_voltage, int(s),
            )
        )
    return out


def measure_spectrum(
    configs: Sequence[SimulationConfig], morlet_omega0: float = 6.0
) -> ImpedanceSpectrum:
    """Simulate every record and merge the per-record CWT estimates."""
    parts = []
    for cfg in configs:
        cur, volt = simulate(cfg)
        parts.append(estimate_impedance_cwt(cur, volt, cfg.excited_frequencies(), morlet_omega0))
    return ImpedanceSpectrum.concatenate(parts)


def simulate_spectrum(
    params: EcmParams,
    sigma_current: float = 0.0,
    sigma_voltage: float = 0.0,
    seed: int = 0,
    plans: Optional[Sequence[RecordPlan]] = None,
    morlet_omega0: float = 6.0,
) -> ImpedanceSpectrum:
    """Convenience wrapper: plan, simulate and estimate a full spectrum."""
    plans = plan_records() if plans is None else plans
    return measure_spectrum(
        record_configs(params, plans, sigma_current, sigma_voltage, seed), morlet_omega0
    )


def reference_spectrum(params: EcmParams, freqs_hz: Sequence[float]) -> ImpedanceSpectrum:
    """Noise-free model impedance on the given frequencies."""
    grid = FrequencyGrid(freqs_hz)
    return ImpedanceSpectrum(grid.freqs_hz, impedance_batch(params.to_vector(), grid.omega, params.l))


def with_seed(config: SimulationConfig, seed: int) -> SimulationConfig:
    return replace(config, seed=seed)
