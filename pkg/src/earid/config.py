"""Configuration dataclasses shared across the pipeline."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

SAMPLE_RATE = 48000
NOISE_CONDITIONS = ("Quiet", "Indoor", "Street")


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = SAMPLE_RATE
    n_fft: int = 1024
    f_low: float = 2000.0
    f_high: float = 8000.0
    max_tof: float = 0.010
    n_coeffs: int = 256

    def digest(self) -> bytes:
        """8-byte hash identifying this feature configuration."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()[:8]


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: int = SAMPLE_RATE
    duration: float = 1.0
    excitation: str = "MLS"
    f_start: float = 20.0
    f_end: float = 20000.0
    excitation_seed: int = 7
    ir_window: int = 1024
    max_tof: float = 0.010
    # calibrated with scripts/calibrate_jitter.py
    wear_jitter: float = 0.8
    # consecutive scans sharing one earbud insertion
    scans_per_insertion: int = 8


@dataclass(frozen=True)
class DatasetConfig:
    n_subjects: int = 44
    scans_per_subject: int = 40
    n_enroll: int = 8
    population_seed: int = 2024
    noise: str = "Quiet"  # a condition name, or "mixed" to cycle all three
    attacks: bool = False
    n_attack_scans: int = 40
    n_public: int = 30
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetConfig":
        data = dict(data)
        synth = SynthConfig(**data.pop("synth", {}))
        known = {f.name for f in fields(cls)}
        return cls(synth=synth, **{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class KeygenConfig:
    alpha: float = 0.0
    n_bins: int = 32
    bin_span: float = 4.0  # histogram covers mean +/- bin_span * std
    smoothing: float = 1e-6
    std_floor: float = 1e-9
