"""Excitation signals, synthetic ear-canal subjects and simulated ECS scans."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .config import NOISE_CONDITIONS, SAMPLE_RATE

logger = logging.getLogger(__name__)

MLS_AMPLITUDE = 0.5
CHIRP_AMPLITUDE = 0.5

# Relative noise levels in dBA-equivalent; Quiet is the reference.
NOISE_LEVELS_DB = {"Quiet": 35.0, "Indoor": 60.0, "Street": 70.0}
NOISE_REF_RMS = 0.005
NOISE_CORNER_HZ = 1500.0
NOISE_ROLLOFF = 8  # amplitude slope exponent above the corner
NOISE_FLOOR = 1e-4  # residual broadband component above the corner, relative

# Per unit of wear_jitter.
DELAY_JITTER_S = 3.0e-6
GAIN_JITTER = 0.02
INSERTION_JITTER_S = 10.0e-6
# Scan-to-scan variation within one insertion, relative to the insertion draw.
MICRO_JITTER = 0.05

FT_REFLECTION_GAIN = 1e-3
FT_COUPLING_CUTOFF_HZ = 800.0
FT_COUPLING_GAIN = 10.0

# Population anatomy: reflection slots shared by all subjects, perturbed per subject.
TEMPLATE_SLOTS = 63
REFLECTION_SPAN_S = 5.2e-3
REFLECTION_DECAY_S = 10.0e-3
TOTAL_REFLECTION = 0.2
SUBJECT_DELAY_SD_S = 60e-6
SUBJECT_GAIN_SD = 0.3

_SINC_HALF = 16
_COLORATION_TAPS = 65

# Shared earbud hardware response (one device model for every subject).
_COLORATION_FREQS = np.array([0, 100, 500, 1000, 3000, 6000, 10000, 16000, 20000, 24000], float)
_COLORATION_GAINS = np.array([0.1, 0.4, 0.8, 1.0, 1.25, 1.0, 0.8, 0.5, 0.2, 0.0])


@dataclass(frozen=True)
class Excitation:
    kind: str  # "MLS" or "Chirp"
    sample_rate: int
    duration: float
    samples: np.ndarray = field(repr=False)
    f_start: float | None = None
    f_end: float | None = None
    seed: int | None = None

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class SubjectProfile:
    """Multipath model of one ear canal (or an attack model).

    ``paths`` is an array of (delay seconds, gain) rows. Rendered attack
    models set ``response`` instead, a full acoustic path FIR that bypasses
    the tap renderer and the device coloration.
    """

    subject_id: str
    paths: np.ndarray = field(repr=False)
    device_coloration: tuple[np.ndarray, np.ndarray] = field(repr=False)
    seed: int
    kind: str = "Genuine"
    response: np.ndarray | None = field(default=None, repr=False)


@dataclass
class EcsScan:
    subject_id: str
    excitation_kind: str
    recorded: np.ndarray | None
    impulse_response: np.ndarray | None
    noise_condition: str | None
    trial_index: int
    attack_kind: str = "Genuine"


def gen_excitation(
    kind: str,
    sample_rate: int = SAMPLE_RATE,
    duration: float = 1.0,
    f_start: float = 20.0,
    f_end: float = 20000.0,
    seed: int = 7,
    strict_rate: bool = True,
) -> Excitation:
    if strict_rate and sample_rate != SAMPLE_RATE:
        raise ValueError(f"unsupported sample rate {sample_rate}; pass strict_rate=False to override")
    if duration <= 0:
        raise ValueError("duration must be positive")
    length = int(round(sample_rate * duration))
    if kind == "MLS":
        nbits = max(2, int(np.ceil(np.log2(length + 1))))
        # any nonzero start state; different seeds give cyclic shifts
        state = np.zeros(nbits, dtype=np.int8)
        bits = np.random.default_rng(seed).integers(0, 2, nbits)
        state[:] = bits if bits.any() else 1
        seq, _ = signal.max_len_seq(nbits, state=state, length=length)
        samples = MLS_AMPLITUDE * (2.0 * seq - 1.0)
        return Excitation("MLS", sample_rate, duration, samples, seed=seed)
    if kind == "Chirp":
        if not 0 < f_start < f_end <= sample_rate / 2:
            raise ValueError(f"invalid chirp band {f_start}..{f_end} Hz at {sample_rate} Hz")
        t = np.arange(length) / sample_rate
        samples = CHIRP_AMPLITUDE * signal.chirp(t, f0=f_start, t1=duration, f1=f_end, method="linear")
        return Excitation("Chirp", sample_rate, duration, samples, f_start, f_end, seed)
    raise ValueError(f"unknown excitation kind {kind!r}")


def default_coloration() -> tuple[np.ndarray, np.ndarray]:
    return _COLORATION_FREQS.copy(), _COLORATION_GAINS.copy()


def _coloration_fir(coloration, sample_rate: int) -> np.ndarray:
    freqs, gains = coloration
    nyq = sample_rate / 2
    f = np.clip(np.asarray(freqs, float) / nyq, 0.0, 1.0)
    g = np.asarray(gains, float)
    if f[-1] < 1.0:
        f, g = np.append(f, 1.0), np.append(g, 0.0)
    return signal.firwin2(_COLORATION_TAPS, f, g)


def _rng_for(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key]))


@lru_cache(maxsize=8)
def _canal_template(population_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Reflection slots shared by the population (common canal anatomy)."""
    rng = _rng_for(population_seed, 0x7E3A)
    delays = np.sort(rng.uniform(0.05e-3, REFLECTION_SPAN_S, TEMPLATE_SLOTS))
    gains = np.exp(-delays / REFLECTION_DECAY_S) * rng.uniform(0.3, 1.0, TEMPLATE_SLOTS)
    gains *= np.where(rng.random(TEMPLATE_SLOTS) < 0.5, -1.0, 1.0)
    gains *= TOTAL_REFLECTION / np.abs(gains).sum()
    return delays, gains


def synth_subject(population_seed: int, subject_index: int, max_tof: float = 0.010) -> SubjectProfile:
    """Genuine subject: direct path plus individually perturbed template reflections."""
    tdel, tgain = _canal_template(population_seed)
    rng = _rng_for(population_seed, subject_index, 0x5EB1)
    direct = rng.uniform(0.1e-3, 0.3e-3)
    rel = np.clip(tdel + rng.normal(0, SUBJECT_DELAY_SD_S, tdel.size), 0.02e-3, max_tof - direct - 0.2e-3)
    gains = tgain * np.exp(rng.normal(0, SUBJECT_GAIN_SD, tgain.size))
    paths = np.vstack([[direct, 1.0], np.column_stack([direct + rel, gains])])
    return SubjectProfile(
        subject_id=f"S{subject_index:03d}",
        paths=paths[np.argsort(paths[:, 0], kind="stable")],
        device_coloration=default_coloration(),
        seed=int(rng.integers(0, 2**63)),
    )


def silicon_profile(population_seed: int, index: int = 0) -> SubjectProfile:
    """Silicon ear model: a few regularly spaced echoes, no fine structure."""
    rng = _rng_for(population_seed, index, 0x51C0)
    n_refl = int(rng.integers(2, 5))
    direct = rng.uniform(0.1e-3, 0.3e-3)
    spacing = rng.uniform(0.2e-3, 0.6e-3)
    rel = spacing * np.arange(1, n_refl + 1)
    gains = 0.6 * (-0.6) ** np.arange(1, n_refl + 1)
    paths = np.vstack([[direct, 1.0], np.column_stack([direct + rel, gains])])
    return SubjectProfile(f"silicon-{index}", paths, default_coloration(),
                          seed=int(rng.integers(0, 2**63)), kind="Synthetic")


def false_trigger_profile(population_seed: int, index: int = 0, sample_rate: int = SAMPLE_RATE) -> SubjectProfile:
    """Earbud not worn: canal reflections collapse to near zero.

    What remains is weak free-air coupling plus structural coupling through
    the housing, which carries mostly low frequencies.
    """
    base = synth_subject(population_seed ^ 0xF7F7, index)
    paths = base.paths.copy()
    paths[:, 1] *= FT_REFLECTION_GAIN
    weak = SubjectProfile(f"ft-{index}", paths, default_coloration(), seed=base.seed, kind="FalseTrigger")
    air = render_response(weak, sample_rate)
    coupling = FT_COUPLING_GAIN * signal.firwin(_COLORATION_TAPS, FT_COUPLING_CUTOFF_HZ, fs=sample_rate)
    response = np.zeros(max(air.size, coupling.size))
    response[: air.size] += air
    response[: coupling.size] += coupling
    return SubjectProfile(weak.subject_id, paths, weak.device_coloration, seed=base.seed,
                          kind="FalseTrigger", response=response)


def _wear_perturb(delays, gains, scale, rng):
    n = delays.size
    delays = delays + rng.normal(0, DELAY_JITTER_S * scale, n)
    delays = delays + rng.normal(0, INSERTION_JITTER_S * scale)
    gains = gains * np.exp(rng.normal(0, GAIN_JITTER * scale, n))
    return delays, gains


def render_response(
    profile: SubjectProfile,
    sample_rate: int = SAMPLE_RATE,
    wear_jitter: float = 0.0,
    rng: np.random.Generator | None = None,
    insertion_rng: np.random.Generator | None = None,
) -> np.ndarray:
    """True in-ear response (device coloration included).

    Wear variation has two parts: an insertion draw scaled by ``wear_jitter``
    and a smaller per-scan draw (``MICRO_JITTER`` of it). Scans that share an
    insertion pass generators seeded identically as ``insertion_rng``;
    without one, each scan is its own insertion and both parts come from
    ``rng``.
    """
    if profile.response is not None:
        return np.asarray(profile.response, float).copy()
    delays = profile.paths[:, 0].copy()
    gains = profile.paths[:, 1].copy()
    if wear_jitter > 0:
        if rng is None:
            raise ValueError("wear_jitter > 0 needs an rng")
        delays, gains = _wear_perturb(delays, gains, wear_jitter, rng if insertion_rng is None else insertion_rng)
        delays, gains = _wear_perturb(delays, gains, wear_jitter * MICRO_JITTER, rng)
        delays = np.maximum(delays, 0.0)
    pos = delays * sample_rate + _SINC_HALF
    length = int(np.ceil(pos.max())) + _SINC_HALF + 1
    taps = np.zeros(length)
    offsets = np.arange(-_SINC_HALF, _SINC_HALF + 1)
    window = np.hanning(2 * _SINC_HALF + 3)[1:-1]
    for p, g in zip(pos, gains):
        base = int(np.floor(p))
        idx = base + offsets
        taps[idx] += g * np.sinc(idx - p) * window
    return np.convolve(taps, _coloration_fir(profile.device_coloration, sample_rate))


def _lowband_noise(n: int, level_db: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(n)
    spec = sfft.rfft(white)
    f = sfft.rfftfreq(n, 1.0 / sample_rate)
    shape = 1.0 / np.sqrt(np.maximum(f, 20.0) / 20.0)
    above = f > NOISE_CORNER_HZ
    shape[above] = shape[above] * (NOISE_CORNER_HZ / f[above]) ** NOISE_ROLLOFF + NOISE_FLOOR * shape[above]
    noise = sfft.irfft(spec * shape, n)
    rms = np.sqrt(np.mean(noise**2))
    target = NOISE_REF_RMS * 10 ** ((level_db - NOISE_LEVELS_DB["Quiet"]) / 20)
    return noise * (target / rms)


def simulate_scan(
    profile: SubjectProfile,
    excitation: Excitation,
    noise_condition: str | None = "Quiet",
    wear_jitter: float = 0.0,
    rng: np.random.Generator | None = None,
    trial_index: int = 0,
    insertion_rng: np.random.Generator | None = None,
) -> EcsScan:
    """Recording for one scan; ``noise_condition=None`` disables noise."""
    if wear_jitter < 0:
        raise ValueError("wear_jitter must be >= 0")
    if noise_condition is not None and noise_condition not in NOISE_CONDITIONS:
        raise ValueError(f"unknown noise condition {noise_condition!r}")
    if rng is None:
        rng = np.random.default_rng(profile.seed)
    h = render_response(profile, excitation.sample_rate, wear_jitter, rng, insertion_rng)
    s = excitation.samples
    recorded = signal.fftconvolve(s, h)[: s.size]
    if noise_condition is not None:
        recorded = recorded + _lowband_noise(s.size, NOISE_LEVELS_DB[noise_condition], excitation.sample_rate, rng)
    return EcsScan(profile.subject_id, excitation.kind, recorded, None, noise_condition, trial_index, profile.kind)


def estimate_channel(s, r, window: int = 1024) -> np.ndarray:
    """Cross-correlation channel estimate h(n) = sum_t s(t - n) r(t), n in [0, window).

    The result is peak-normalized so max |h| == 1.
    """
    s = np.asarray(s.samples if isinstance(s, Excitation) else s, float)
    r = np.asarray(r, float)
    if s.shape != r.shape:
        raise ValueError("excitation and recording must have equal length")
    if not np.any(s):
        raise ValueError("excitation is all zero")
    nfft = sfft.next_fast_len(s.size + window)
    h = sfft.irfft(np.conj(sfft.rfft(s, nfft)) * sfft.rfft(r, nfft), nfft)[:window]
    peak = np.max(np.abs(h))
    return h / peak if peak > 0 else h


def scan(
    profile: SubjectProfile,
    excitation: Excitation,
    noise_condition: str | None = "Quiet",
    wear_jitter: float = 0.0,
    rng: np.random.Generator | None = None,
    trial_index: int = 0,
    window: int = 1024,
    insertion_rng: np.random.Generator | None = None,
) -> EcsScan:
    """simulate_scan followed by estimate_channel."""
    out = simulate_scan(profile, excitation, noise_condition, wear_jitter, rng, trial_index, insertion_rng)
    out.impulse_response = estimate_channel(excitation.samples, out.recorded, window)
    return out


def profile_from_cepstrum(cepstrum, subject_id: str, feature_cfg, kind: str = "Universal") -> SubjectProfile:
    """Render a liftered cepstral vector back into an ear-model response.

    The cepstrum is zero-extended, inverted to a log-magnitude spectrum,
    and turned into a delayed zero-phase FIR. Out-of-band bins take the
    nearest band-edge magnitude.
    """
    from .features import band_bins

    n_bins = feature_cfg.n_fft // 2 + 1
    full = np.zeros(n_bins)
    c = np.asarray(cepstrum, float)
    full[: c.size] = c
    logmag = sfft.idct(full, type=2, norm="ortho")
    lo, hi = band_bins(feature_cfg.sample_rate, feature_cfg.n_fft, feature_cfg.f_low, feature_cfg.f_high)
    logmag[:lo] = logmag[lo]
    logmag[hi + 1 :] = logmag[hi]
    mag = np.exp(logmag - logmag[lo : hi + 1].max())
    fir = np.roll(sfft.irfft(mag, feature_cfg.n_fft), feature_cfg.n_fft // 8)
    fir *= np.hanning(fir.size)
    return SubjectProfile(subject_id, np.zeros((0, 2)), default_coloration(), seed=0, kind=kind, response=fir)
