"""Synthetic ECS datasets on disk: generation, manifest and loading.

Layout::

    DIR/manifest.json
    DIR/scans/<subject_id>/<trial>.f32   impulse response, little-endian float32

Genuine scans are grouped into insertions of ``scans_per_insertion``
consecutive trials that share one wear perturbation. With the defaults the
first insertion is exactly the 8 enrollment scans.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import synth
from .config import NOISE_CONDITIONS, DatasetConfig, FeatureConfig, KeygenConfig
from .features import extract_features

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT_NAME = "earid-dataset"
FORMAT_VERSION = 1
ATTACK_KINDS = ("Synthetic", "Universal", "FalseTrigger")
ATTACK_SCANS_PER_PROFILE = 10

# stream tags for per-purpose RNGs
_TAG_SCAN = 0x5CA4
_TAG_INSERTION = 0x1A5E
_TAG_ATTACK = 0xA77C


@dataclass(frozen=True)
class ScanRecord:
    subject_id: str
    trial: int
    noise_condition: str
    attack_kind: str
    path: str
    insertion: int = 0

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "trial": self.trial,
            "noise_condition": self.noise_condition,
            "attack_kind": self.attack_kind,
            "insertion": self.insertion,
            "path": self.path,
        }


@dataclass
class Dataset:
    root: Path
    config: DatasetConfig
    subjects: list[dict]
    scans: list[ScanRecord] = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def genuine_ids(self) -> list[str]:
        return [s["subject_id"] for s in self.subjects if s["kind"] == "Genuine"]

    def records(self, subject_id: str | None = None, attack_kind: str | None = None) -> list[ScanRecord]:
        out = self.scans
        if subject_id is not None:
            out = [r for r in out if r.subject_id == subject_id]
        if attack_kind is not None:
            out = [r for r in out if r.attack_kind == attack_kind]
        return sorted(out, key=lambda r: (r.subject_id, r.trial))

    def load(self, record: ScanRecord) -> np.ndarray:
        return read_response(self.root / record.path)

    def responses(self, subject_id: str | None = None, attack_kind: str | None = None,
                  trials=None) -> np.ndarray:
        """Stacked impulse responses, ordered by subject then trial."""
        recs = self.records(subject_id, attack_kind)
        if trials is not None:
            wanted = set(int(t) for t in trials)
            recs = [r for r in recs if r.trial in wanted]
        if not recs:
            raise KeyError(f"no scans for subject={subject_id!r} kind={attack_kind!r}")
        key = (subject_id, attack_kind, tuple(r.trial for r in recs))
        if key not in self._cache:
            self._cache[key] = np.vstack([self.load(r) for r in recs])
        return self._cache[key]

    def profile(self, subject_id: str) -> synth.SubjectProfile:
        """Regenerate a genuine subject's ground-truth profile from the manifest."""
        for s in self.subjects:
            if s["subject_id"] == subject_id and s["kind"] == "Genuine":
                return synth.synth_subject(self.config.population_seed, s["index"], self.config.synth.max_tof)
        raise KeyError(f"unknown genuine subject {subject_id!r}")

    def subject_index(self, subject_id: str) -> int:
        for s in self.subjects:
            if s["subject_id"] == subject_id:
                return int(s["index"])
        raise KeyError(subject_id)


def write_response(path: Path, h) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.asarray(h, dtype="<f4").tobytes())


def read_response(path: Path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<f4").astype(float)


def noise_for_trial(noise: str, trial: int) -> str:
    if noise == "mixed":
        return NOISE_CONDITIONS[trial % len(NOISE_CONDITIONS)]
    if noise not in NOISE_CONDITIONS:
        raise ValueError(f"unknown noise schedule {noise!r}")
    return noise


def excitation_for(config: DatasetConfig) -> synth.Excitation:
    sc = config.synth
    return synth.gen_excitation(sc.excitation, sc.sample_rate, sc.duration, sc.f_start, sc.f_end, sc.excitation_seed)


def genuine_scan(profile: synth.SubjectProfile, subject_index: int, trial: int, config: DatasetConfig,
                 excitation: synth.Excitation, wear_jitter: float | None = None,
                 noise_condition: str | None = None) -> synth.EcsScan:
    """One genuine scan, reproducible from (population seed, subject, trial)."""
    sc = config.synth
    seed = config.population_seed
    insertion = trial // sc.scans_per_insertion
    return synth.scan(
        profile,
        excitation,
        noise_for_trial(config.noise, trial) if noise_condition is None else noise_condition,
        sc.wear_jitter if wear_jitter is None else wear_jitter,
        synth._rng_for(seed, subject_index, trial, _TAG_SCAN),
        trial,
        sc.ir_window,
        insertion_rng=synth._rng_for(seed, subject_index, insertion, _TAG_INSERTION),
    )


def modal_feature(features, config: KeygenConfig | None = None) -> np.ndarray:
    """Per-dimension histogram peak (bin center) of a feature population."""
    from .keygen import population_stats

    stats = population_stats(np.asarray(features, float), config)
    peak = np.argmax(stats.q, axis=1)
    rows = np.arange(stats.n_dims)
    return 0.5 * (stats.edges[rows, peak] + stats.edges[rows, peak + 1])


def universal_profile(config: DatasetConfig, feature_cfg: FeatureConfig | None = None) -> synth.SubjectProfile:
    """Attack profile rendered from the modal feature of a public subject pool.

    The pool uses the same population model as the dataset but disjoint
    subject indices, standing in for ear scans an attacker could collect.
    """
    fcfg = feature_cfg or FeatureConfig()
    ex = excitation_for(config)
    feats = []
    for j in range(config.n_public):
        idx = config.n_subjects + j
        prof = synth.synth_subject(config.population_seed, idx, config.synth.max_tof)
        for trial in range(config.n_enroll):
            s = genuine_scan(prof, idx, trial, config, ex)
            feats.append(extract_features([s], fcfg).coefficients)
    return synth.profile_from_cepstrum(modal_feature(np.vstack(feats)), "universal", fcfg)


def _validate(config: DatasetConfig) -> None:
    if config.n_subjects < 2:
        raise ValueError("need at least two subjects")
    if not 2 <= config.n_enroll < config.scans_per_subject:
        raise ValueError(f"invalid split: {config.n_enroll} enroll of {config.scans_per_subject} scans")
    if (config.scans_per_subject - config.n_enroll) % 2:
        raise ValueError("authentication scans must pair up (2 scans per attempt)")
    if config.synth.scans_per_insertion < 1:
        raise ValueError("scans_per_insertion must be >= 1")
    noise_for_trial(config.noise, 0)


def gen_population(config: DatasetConfig, out_dir) -> Dataset:
    """Generate a dataset and write it to ``out_dir``.

    Output is a pure function of ``config``; regenerating gives identical bytes.
    """
    _validate(config)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    ex = excitation_for(config)
    sc = config.synth
    subjects, records = [], []

    def emit(s: synth.EcsScan, insertion: int = 0) -> None:
        rel = f"scans/{s.subject_id}/{s.trial_index:03d}.f32"
        write_response(root / rel, s.impulse_response)
        records.append(ScanRecord(s.subject_id, s.trial_index, s.noise_condition, s.attack_kind, rel, insertion))

    for i in range(config.n_subjects):
        prof = synth.synth_subject(config.population_seed, i, sc.max_tof)
        subjects.append({"subject_id": prof.subject_id, "index": i, "kind": "Genuine", "n_paths": len(prof.paths)})
        for trial in range(config.scans_per_subject):
            emit(genuine_scan(prof, i, trial, config, ex), trial // sc.scans_per_insertion)
        logger.debug("generated %s", prof.subject_id)

    if config.attacks:
        n_profiles = max(1, -(-config.n_attack_scans // ATTACK_SCANS_PER_PROFILE))
        makers = {
            "Synthetic": lambda j: synth.silicon_profile(config.population_seed, j),
            "FalseTrigger": lambda j: synth.false_trigger_profile(config.population_seed, j, sc.sample_rate),
        }
        for kind, make in makers.items():
            profs = [make(j) for j in range(n_profiles)]
            for j, p in enumerate(profs):
                subjects.append({"subject_id": p.subject_id, "index": j, "kind": kind, "n_paths": len(p.paths)})
            for trial in range(config.n_attack_scans):
                p = profs[trial // ATTACK_SCANS_PER_PROFILE]
                rng = synth._rng_for(config.population_seed, ATTACK_KINDS.index(kind), trial, _TAG_ATTACK)
                s = synth.scan(p, ex, noise_for_trial(config.noise, trial), sc.wear_jitter, rng, trial, sc.ir_window)
                emit(s)
        uni = universal_profile(config)
        subjects.append({"subject_id": uni.subject_id, "index": 0, "kind": "Universal", "n_paths": 0})
        for trial in range(config.n_attack_scans):
            rng = synth._rng_for(config.population_seed, ATTACK_KINDS.index("Universal"), trial, _TAG_ATTACK)
            emit(synth.scan(uni, ex, noise_for_trial(config.noise, trial), sc.wear_jitter, rng, trial, sc.ir_window))

    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "subjects": subjects,
        "scans": [r.to_dict() for r in records],
    }
    _atomic_write(root / MANIFEST, json.dumps(manifest, sort_keys=True, indent=1).encode())
    return Dataset(root, config, subjects, records)


def _atomic_write(path: Path, blob: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_dataset(path) -> Dataset:
    root = Path(path)
    try:
        manifest = json.loads((root / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"{root} has no {MANIFEST}; not a dataset directory") from None
    if manifest.get("format") != FORMAT_NAME:
        raise ValueError(f"{root / MANIFEST} is not an {FORMAT_NAME} manifest")
    config = DatasetConfig.from_dict(manifest["config"])
    records = [ScanRecord(**r) for r in manifest["scans"]]
    return Dataset(root, config, manifest["subjects"], records)
