"""Impulse response -> liftered cepstral feature.

bandpass -> per-trial power normalization and aggregation -> log magnitude
-> DCT cepstrum -> time-of-flight liftering.

The cepstrum is taken over the full one-sided FFT grid (``n_fft // 2 + 1``
bins). Bins outside the band are zero after filtering and hit the log floor,
so they add the same constant pattern to every feature. With this grid,
coefficient ``n`` sits at quefrency ``n / (2 * n_bins * bin_hz)``, roughly
``n`` samples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .config import FeatureConfig

LOG_FLOOR = 1e-12


def band_bins(sample_rate: float, n_fft: int, f_low: float, f_high: float) -> tuple[int, int]:
    """Inclusive FFT bin range for [f_low, f_high], rounding half up."""
    if not 0 <= f_low < f_high <= sample_rate / 2:
        raise ValueError(f"invalid band edges {f_low}..{f_high} Hz at {sample_rate} Hz")
    step = sample_rate / n_fft
    lo = int(np.floor(f_low / step + 0.5))
    hi = min(int(np.floor(f_high / step + 0.5)), n_fft // 2)
    return lo, hi


@dataclass(frozen=True)
class SpectrumFeature:
    magnitudes: np.ndarray = field(repr=False)  # band bins only
    f_low: float
    f_high: float
    n_fft: int
    sample_rate: float
    bin_lo: int
    bin_hi: int

    @property
    def band_energy(self) -> float:
        return float(np.sum(self.magnitudes**2))


@dataclass(frozen=True)
class CepstrumFeature:
    coefficients: np.ndarray
    max_tof: float

    def __len__(self) -> int:
        return self.coefficients.size


def bandpass(h, sample_rate: float = 48000, f_low: float = 2000.0, f_high: float = 8000.0, n_fft: int | None = None):
    """Zero-phase band-pass by masking the FFT of ``h`` (last axis).

    Bins outside [f_low, f_high] are zeroed exactly.
    """
    h = np.asarray(h, float)
    n = h.shape[-1] if n_fft is None else n_fft
    lo, hi = band_bins(sample_rate, n, f_low, f_high)
    spec = sfft.rfft(h, n, axis=-1)
    spec[..., :lo] = 0
    spec[..., hi + 1 :] = 0
    return sfft.irfft(spec, n, axis=-1)[..., : h.shape[-1]]


def normalize_spectrum(trials, sample_rate: float = 48000, f_low: float = 2000.0, f_high: float = 8000.0,
                       n_fft: int = 1024) -> SpectrumFeature:
    """Aggregate K filtered responses into a unit-band-energy magnitude spectrum.

    Each trial's band magnitudes are scaled to unit band energy before the
    K trials are summed, then the sum is renormalized. This makes the
    result independent of per-trial gain.
    """
    arr = np.atleast_2d(np.asarray(trials, float))
    if arr.shape[0] < 1:
        raise ValueError("need at least one trial")
    lo, hi = band_bins(sample_rate, n_fft, f_low, f_high)
    mags = np.abs(sfft.rfft(arr, n_fft, axis=-1))[:, lo : hi + 1]
    energy = np.sqrt(np.sum(mags**2, axis=-1, keepdims=True))
    if np.any(energy == 0):
        raise ValueError("degenerate scan: zero energy in band")
    agg = np.sum(mags / energy, axis=0)
    total = np.sqrt(np.sum(agg**2))
    if total == 0:
        raise ValueError("degenerate scan: zero aggregate spectrum")
    return SpectrumFeature(agg / total, f_low, f_high, n_fft, sample_rate, lo, hi)


def full_log_spectrum(spec: SpectrumFeature) -> np.ndarray:
    n_bins = spec.n_fft // 2 + 1
    full = np.zeros(n_bins)
    full[spec.bin_lo : spec.bin_hi + 1] = spec.magnitudes
    return np.log(np.maximum(full, LOG_FLOOR))


def cepstrum(spec: SpectrumFeature) -> np.ndarray:
    """Orthonormal DCT-II of the log magnitude over the full one-sided grid."""
    return sfft.dct(full_log_spectrum(spec), type=2, norm="ortho")


def inverse_cepstrum(c, n_bins: int | None = None) -> np.ndarray:
    """Log-magnitude spectrum from (possibly truncated) cepstral coefficients."""
    c = np.asarray(c, float)
    n = c.size if n_bins is None else n_bins
    full = np.zeros(n)
    full[: c.size] = c
    return sfft.idct(full, type=2, norm="ortho")


def quefrency(index, n_bins: int, sample_rate: float) -> np.ndarray:
    """Quefrency in seconds of cepstral index on an ``n_bins`` one-sided grid."""
    bin_hz = sample_rate / (2 * (n_bins - 1))
    return np.asarray(index, float) / (2 * n_bins * bin_hz)


def lifter(c, max_tof: float = 0.010, sample_rate: float = 48000, n_coeffs: int | None = 256) -> CepstrumFeature:
    """Keep coefficients with quefrency <= max_tof, at most ``n_coeffs`` of them."""
    if max_tof <= 0:
        raise ValueError("max_tof must be positive")
    c = np.asarray(c, float)
    n = c.size
    if np.isinf(max_tof):
        keep = n
    else:
        bin_hz = sample_rate / (2 * (n - 1))
        keep = min(n, int(np.floor(max_tof * 2 * n * bin_hz + 1e-9)) + 1)
    if n_coeffs is not None:
        if n_coeffs > n:
            warnings.warn(f"requested {n_coeffs} coefficients but only {n} available; keeping all", stacklevel=2)
        keep = min(keep, n_coeffs)
    return CepstrumFeature(c[:keep].copy(), max_tof)


def _responses(scans) -> np.ndarray:
    rows = []
    for s in scans:
        h = getattr(s, "impulse_response", s)
        if h is None:
            raise ValueError("scan has no impulse response")
        rows.append(np.asarray(h, float))
    if not rows:
        raise ValueError("need at least one scan")
    return np.vstack(rows)


def extract_features(scans, config: FeatureConfig | None = None) -> CepstrumFeature:
    """Cepstral feature for one set of scans of the same subject and session."""
    cfg = config or FeatureConfig()
    h = _responses(scans)
    filtered = bandpass(h, cfg.sample_rate, cfg.f_low, cfg.f_high, cfg.n_fft)
    spec = normalize_spectrum(filtered, cfg.sample_rate, cfg.f_low, cfg.f_high, cfg.n_fft)
    return lifter(cepstrum(spec), cfg.max_tof, cfg.sample_rate, cfg.n_coeffs)


def band_magnitudes(responses, config: FeatureConfig | None = None) -> np.ndarray:
    """Per-response unit-energy band magnitudes, shape (n, band bins)."""
    cfg = config or FeatureConfig()
    h = np.atleast_2d(np.asarray(responses, float))
    lo, hi = band_bins(cfg.sample_rate, cfg.n_fft, cfg.f_low, cfg.f_high)
    mags = np.abs(sfft.rfft(bandpass(h, cfg.sample_rate, cfg.f_low, cfg.f_high, cfg.n_fft), cfg.n_fft, axis=-1))
    mags = mags[:, lo : hi + 1]
    norms = np.sqrt(np.sum(mags**2, axis=-1, keepdims=True))
    if np.any(norms == 0):
        raise ValueError("degenerate scan: zero energy in band")
    return mags / norms


def features_from_band_magnitudes(unit_mags, config: FeatureConfig | None = None) -> np.ndarray:
    """Vectorized tail of extract_features.

    Each row of ``unit_mags`` is one aggregate (sum of unit-energy trial
    magnitudes); rows are renormalized, logged, transformed and liftered.
    """
    cfg = config or FeatureConfig()
    m = np.atleast_2d(np.asarray(unit_mags, float))
    m = m / np.sqrt(np.sum(m**2, axis=-1, keepdims=True))
    lo, hi = band_bins(cfg.sample_rate, cfg.n_fft, cfg.f_low, cfg.f_high)
    full = np.full((m.shape[0], cfg.n_fft // 2 + 1), LOG_FLOOR)
    full[:, lo : hi + 1] = np.maximum(m, LOG_FLOOR)
    c = sfft.dct(np.log(full), type=2, norm="ortho", axis=-1)
    keep = lifter(c[0], cfg.max_tof, cfg.sample_rate, cfg.n_coeffs).coefficients.size
    return c[:, :keep]
