"""Sensor-array geometry, periodic fractional-delay filters, and synthetic
wideband scenario generation.

Delays are realized as periodic filters of length ``period`` whose DFT is a
pure phase ramp, so delaying is exact circular convolution and everything
downstream can live in the frequency domain.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

WINDOWS = ("rectangular", "hann")

# A shaper receives the baseline phase-ramp spectrum and the config and may
# taper it (e.g. a faithful pass-band-compensated design); it must preserve
# conjugate symmetry. The default (None) keeps the pure phase ramp.
SpectrumShaper = Callable[[np.ndarray, "FilterConfig"], np.ndarray]


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: sensor count, spacing, medium speed, sampling."""

    num_sensors: int
    spacing: float  # meters
    wave_speed: float  # meters/second
    sample_rate: float  # Hz
    aliasing_bound: float = 1.0  # warn when spacing * f_s / c exceeds this

    def __post_init__(self):
        if self.num_sensors < 1:
            raise ValueError("num_sensors must be >= 1")
        if min(self.spacing, self.wave_speed, self.sample_rate) <= 0:
            raise ValueError("spacing, wave_speed, and sample_rate must be positive")
        ratio = self.spacing * self.sample_rate / self.wave_speed
        if ratio > self.aliasing_bound + 1e-12:
            warnings.warn(
                f"spacing*sample_rate/wave_speed = {ratio:.3g} exceeds the "
                f"aliasing bound {self.aliasing_bound:.3g}; spatial aliasing possible",
                stacklevel=2,
            )


@dataclass(frozen=True)
class FilterConfig:
    """Dimensions and shaping knobs of the periodic fractional-delay filter.

    ``filter_len`` defaults to n_samples + 1, which makes the filter period
    exactly twice the observation length.
    """

    n_samples: int
    filter_len: Optional[int] = None
    transition_param: float = 0.25
    window: str = "rectangular"

    def __post_init__(self):
        if self.n_samples <= 0 or self.n_samples % 2:
            raise ValueError("n_samples must be a positive even integer")
        if self.filter_len is None:
            object.__setattr__(self, "filter_len", self.n_samples + 1)
        if self.filter_len <= 0 or self.filter_len % 2 == 0:
            raise ValueError("filter_len must be a positive odd integer")
        if not 0.0 <= self.transition_param <= 1.0:
            raise ValueError("transition_param must lie in [0, 1]")
        if self.window not in WINDOWS:
            raise ValueError(f"window must be one of {WINDOWS}")

    @property
    def period(self) -> int:
        """Common period of source signals and delay filters."""
        return self.n_samples + self.filter_len - 1


@dataclass(frozen=True)
class SourceSpec:
    """One synthetic source: direction, strength, and occupied band."""

    doa: float  # radians in [-pi/2, pi/2]
    snr_db: float  # 10*log10(source power / noise power)
    band: tuple[float, float]  # (f_lo, f_hi) in Hz

    def __post_init__(self):
        if not -np.pi / 2 <= self.doa <= np.pi / 2:
            raise ValueError("doa must lie in [-pi/2, pi/2]")
        lo, hi = self.band
        if not 0 < lo < hi:
            raise ValueError("band must satisfy 0 < f_lo < f_hi")


def ula_delay(geom: ArrayGeometry, sensor_index: int, doa: float) -> float:
    """Propagation delay (seconds) at a sensor for a plane wave from ``doa``.

    ``sensor_index`` is 1-based; the first sensor is the zero-delay reference.
    Multiply by ``geom.sample_rate`` for the delay in samples.
    """
    if not 1 <= sensor_index <= geom.num_sensors:
        raise ValueError(f"sensor_index {sensor_index} outside 1..{geom.num_sensors}")
    return -(sensor_index - 1) * geom.spacing * np.sin(doa) / geom.wave_speed


def sensor_delays(geom: ArrayGeometry, doa: float) -> np.ndarray:
    """Delays in samples for all sensors at once."""
    idx = np.arange(geom.num_sensors)
    return -idx * geom.spacing * np.sin(doa) / geom.wave_speed * geom.sample_rate


def _phase_ramp_spectra(delays: np.ndarray, period: int) -> np.ndarray:
    """Conjugate-symmetric delay spectra, one row per delay (in samples).

    Bins below Nyquist get exp(-2j pi m delay / period); the Nyquist bin is
    pinned to cos(pi delay), the unique real value consistent with conjugate
    symmetry that reduces to +-1 at integer delays.
    """
    delays = np.atleast_1d(np.asarray(delays, dtype=float))
    half = period // 2
    out = np.empty((delays.shape[0], period), dtype=complex)
    out[:, :half] = np.exp(np.outer(delays, np.arange(half)) * (-2j * np.pi / period))
    out[:, half] = np.cos(np.pi * delays)
    out[:, half + 1 :] = out[:, 1:half][:, ::-1].conj()
    return out


def fractional_delay_spectrum(
    delay_samples: float,
    cfg: FilterConfig,
    shaper: Optional[SpectrumShaper] = None,
) -> np.ndarray:
    """DFT of the periodic fractional-delay filter for a delay in samples.

    Unit modulus on every bin except possibly Nyquist; conjugate symmetric, so
    the filter taps are real.
    """
    spectrum = _phase_ramp_spectra(np.array([delay_samples]), cfg.period)[0]
    if shaper is not None:
        spectrum = shaper(spectrum, cfg)
    return spectrum


def delay_taps(delay_samples: float, cfg: FilterConfig, shaper=None) -> np.ndarray:
    """Real filter taps: inverse DFT of the delay spectrum."""
    taps = np.fft.ifft(fractional_delay_spectrum(delay_samples, cfg, shaper))
    residue = float(np.abs(taps.imag).max())
    if residue > 1e-9:
        raise ValueError(f"delay taps have imaginary residue {residue:.3e}; "
                         "the spectrum is not conjugate symmetric")
    return taps.real


def band_bin_mask(band: tuple[float, float], period: int, sample_rate: float) -> np.ndarray:
    """Boolean mask of DFT bins whose frequency falls inside ``band``."""
    lo, hi = band
    if hi > sample_rate / 2 + 1e-12:
        raise ValueError(f"band upper edge {hi} Hz exceeds Nyquist {sample_rate / 2} Hz")
    freqs = np.fft.fftfreq(period, d=1.0 / sample_rate)
    mask = (np.abs(freqs) >= lo) & (np.abs(freqs) <= hi)
    if period % 2 == 0:
        # fftfreq reports the Nyquist bin as negative
        nyq = sample_rate / 2
        mask[period // 2] = lo <= nyq <= hi
    if not mask.any():
        raise ValueError(f"band {band} Hz covers no DFT bin at period {period}")
    return mask


def synthesize_sources(
    specs: Sequence[SourceSpec],
    noise_power: float,
    cfg: FilterConfig,
    geom: ArrayGeometry,
    rng,
) -> tuple[np.ndarray, np.ndarray]:
    """Generate periodic band-limited sources and the received sensor signals.

    Each source is white Gaussian noise brick-wall limited to its band and
    rescaled to an exact empirical power of noise_power * 10**(snr_db/10).
    The received signal applies the same circular-convolution model the
    likelihood assumes: per-sensor delay filtering of the length-``period``
    sources, truncated to ``n_samples``, plus white noise.

    Returns (sources, received) with shapes (k, period) and (M, n_samples).
    Deterministic given the generator state; sources are drawn first, then the
    sensor noise block.
    """
    rng = as_generator(rng)
    if noise_power <= 0:
        raise ValueError("noise_power must be positive")
    n_p, n, m = cfg.period, cfg.n_samples, geom.num_sensors

    sources = np.empty((len(specs), n_p))
    for j, spec in enumerate(specs):
        mask = band_bin_mask(spec.band, n_p, geom.sample_rate)
        coeffs = np.fft.fft(rng.standard_normal(n_p))
        coeffs[~mask] = 0.0
        x = np.fft.ifft(coeffs).real
        target = noise_power * 10.0 ** (spec.snr_db / 10.0)
        sources[j] = x * np.sqrt(target / np.mean(x**2))

    received = np.sqrt(noise_power) * rng.standard_normal((m, n))
    if specs:
        source_spectra = np.fft.fft(sources, axis=1)
        for i in range(m):
            acc = np.zeros(n_p, dtype=complex)
            for j, spec in enumerate(specs):
                delay = ula_delay(geom, i + 1, spec.doa) * geom.sample_rate
                acc += fractional_delay_spectrum(delay, cfg) * source_spectra[j]
            received[i] += np.fft.ifft(acc).real[:n]
    return sources, received


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a seed, or None (fresh entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
