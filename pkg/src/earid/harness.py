"""Dataset-level evaluation: error rates, attack suites and drift studies."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dataset as dsmod
from . import synth
from .config import NOISE_CONDITIONS, FeatureConfig, KeygenConfig
from .ecc import get_code
from .features import band_magnitudes, extract_features
from .keygen import binarize_batch, population_stats, standardize
from .protocol import (
    EnrolledCredential,
    commit,
    encode_auth_commit,
    encode_enroll_features,
    enrollment_session,
    decode_helper,
    verifier_session,
)

logger = logging.getLogger(__name__)

DEFAULT_GALLERY = 30
DEFAULT_SUBJECTS = 44
AUTH_SCANS = 2

# acceptance targets used by --strict
TARGET_BAC = 0.97
TARGET_FAR = 0.02
TARGET_ASR = 0.02
TARGET_FT = 0.005
TARGET_DRIFT_GENUINE = 0.95
TARGET_DRIFT_PASSIVE_BITS = 50


def bit_error_rate(k1, k2) -> float:
    a = np.asarray(getattr(k1, "bits", k1), dtype=np.uint8)
    b = np.asarray(getattr(k2, "bits", k2), dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError(f"key lengths differ: {a.size} vs {b.size}")
    return float(np.count_nonzero(a != b)) / a.size


@dataclass(frozen=True)
class SweepCurve:
    thresholds: np.ndarray
    frr: np.ndarray
    far: np.ndarray
    eer: float
    eer_threshold: float  # fractional bits where FRR and FAR cross


def _to_bits(bers, L: int) -> np.ndarray:
    return np.rint(np.asarray(bers, float) * L).astype(int)


def sweep_rates(genuine_bers, impostor_bers, L: int) -> SweepCurve:
    """FRR/FAR at every integer threshold 0..L and the interpolated EER.

    FRR(tau) = P(genuine bits > tau), FAR(tau) = P(impostor bits <= tau).
    A virtual point at tau = -1 (FRR 1, FAR 0) anchors the interpolation.
    """
    g = _to_bits(genuine_bers, L)
    i = _to_bits(impostor_bers, L)
    if g.size == 0 or i.size == 0:
        raise ValueError("need nonempty genuine and impostor samples")
    taus = np.arange(L + 1)
    frr = (g.size - np.searchsorted(np.sort(g), taus, side="right")) / g.size
    far = np.searchsorted(np.sort(i), taus, side="right") / i.size
    ext_frr = np.concatenate([[1.0], frr])
    ext_far = np.concatenate([[0.0], far])
    diff = ext_frr - ext_far
    j = int(np.argmax(diff <= 0)) if np.any(diff <= 0) else len(diff) - 1
    if diff[j] == 0 or j == 0:
        eer, at = 0.5 * (ext_frr[j] + ext_far[j]), float(j - 1)
    else:
        w = diff[j - 1] / (diff[j - 1] - diff[j])
        eer_frr = ext_frr[j - 1] + w * (ext_frr[j] - ext_frr[j - 1])
        eer_far = ext_far[j - 1] + w * (ext_far[j] - ext_far[j - 1])
        eer, at = 0.5 * (eer_frr + eer_far), j - 2 + w
    return SweepCurve(taus, frr, far, float(eer), float(at))


@dataclass(frozen=True)
class ErrorRates:
    frr: float
    far: float
    eer: float
    bac: float
    threshold_bits: int

    @classmethod
    def at(cls, frr: float, far: float, eer: float, threshold_bits: int) -> "ErrorRates":
        return cls(float(frr), float(far), float(eer), (2.0 - far - frr) / 2.0, int(threshold_bits))


@dataclass
class EvalReport:
    ecc: str
    rates: ErrorRates
    n_trials: int
    n_gallery: int
    n_enrolled: int
    genuine_attempts: int
    impostor_attempts: int
    protocol_mismatches: int
    genuine_bits: list[int] = field(repr=False)
    impostor_bits: list[int] = field(repr=False)
    per_trial: list[dict] = field(repr=False)
    mean_retained_dims: float = 0.0

    def genuine_ber_mode(self, L: int) -> float:
        vals, counts = np.unique(self.genuine_bits, return_counts=True)
        return float(vals[np.argmax(counts)]) / L

    def to_dict(self) -> dict:
        L = get_code(self.ecc).n
        g = np.asarray(self.genuine_bits)
        i = np.asarray(self.impostor_bits)
        return {
            "ecc": self.ecc,
            "rates": asdict(self.rates),
            "n_trials": self.n_trials,
            "n_gallery": self.n_gallery,
            "n_enrolled": self.n_enrolled,
            "genuine_attempts": self.genuine_attempts,
            "impostor_attempts": self.impostor_attempts,
            "protocol_mismatches": self.protocol_mismatches,
            "mean_retained_dims": round(self.mean_retained_dims, 6),
            "genuine_ber": _summary(g, L),
            "impostor_ber": _summary(i, L),
            "genuine_ber_mode": self.genuine_ber_mode(L),
            "per_trial": self.per_trial,
        }

    def meets_targets(self) -> bool:
        return self.rates.bac >= TARGET_BAC and self.rates.far <= TARGET_FAR and self.protocol_mismatches == 0


def _summary(bits: np.ndarray, L: int) -> dict:
    if bits.size == 0:
        return {"n": 0}
    q = np.quantile(bits, [0.0, 0.05, 0.5, 0.95, 1.0])
    return {
        "n": int(bits.size),
        "mean_bits": round(float(bits.mean()), 6),
        "min_bits": int(q[0]),
        "p05_bits": float(q[1]),
        "median_bits": float(q[2]),
        "p95_bits": float(q[3]),
        "max_bits": int(q[4]),
        "mean": round(float(bits.mean()) / L, 6),
    }


def _seed64(*key: int) -> int:
    state = np.random.SeedSequence([int(k) for k in key]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def group_sizes(n_subjects: int) -> tuple[int, int]:
    """(gallery, enrolled) sizes: 30/14 at 44 subjects, proportional otherwise."""
    if n_subjects < 4:
        raise ValueError(f"need at least 4 subjects for a gallery/enrolled split, got {n_subjects}")
    if n_subjects == DEFAULT_SUBJECTS:
        return DEFAULT_GALLERY, DEFAULT_SUBJECTS - DEFAULT_GALLERY
    gallery = int(round(n_subjects * DEFAULT_GALLERY / DEFAULT_SUBJECTS))
    gallery = min(max(gallery, 2), n_subjects - 2)
    warnings.warn(f"{n_subjects} subjects: using proportional split {gallery} gallery / "
                  f"{n_subjects - gallery} enrolled", stacklevel=3)
    return gallery, n_subjects - gallery


class FeatureCache:
    """Per-dataset features, computed once with extract_features.

    ``per_scan[s]`` holds every scan's own feature, ``enroll[s]`` the
    aggregate over the enrollment scans, ``auth[s]`` one aggregate per
    two-scan attempt.
    """

    def __init__(self, ds: dsmod.Dataset, feature_cfg: FeatureConfig | None = None):
        self.cfg = feature_cfg or FeatureConfig()
        self.ds = ds
        n_enroll = ds.config.n_enroll
        self.ids = ds.genuine_ids
        self.per_scan, self.enroll, self.auth = {}, {}, {}
        for sid in self.ids:
            h = ds.responses(sid)
            self.per_scan[sid] = np.vstack([extract_features([x], self.cfg).coefficients for x in h])
            self.enroll[sid] = extract_features(list(h[:n_enroll]), self.cfg).coefficients
            self.auth[sid] = self._pairs(h[n_enroll:])
        self.attacks = {}
        for kind in dsmod.ATTACK_KINDS:
            recs = ds.records(attack_kind=kind)
            if recs:
                self.attacks[kind] = self._pairs(np.vstack([ds.load(r) for r in recs]))

    def _pairs(self, h: np.ndarray) -> np.ndarray:
        n = h.shape[0] // AUTH_SCANS
        return np.vstack([extract_features(list(h[AUTH_SCANS * j : AUTH_SCANS * (j + 1)]), self.cfg).coefficients
                          for j in range(n)])


@dataclass
class _Enrolled:
    user_id: str
    credential: EnrolledCredential
    helper: object


class _Runner:
    """Shared grouping / enrollment / attempt machinery."""

    def __init__(self, ds: dsmod.Dataset, ecc: str, cache: FeatureCache | None = None,
                 keygen_cfg: KeygenConfig | None = None):
        self.ds = ds
        self.code = get_code(ecc)
        self.ecc = ecc
        self.cache = cache or FeatureCache(ds)
        self.kcfg = keygen_cfg or KeygenConfig()
        self.n_gallery, self.n_enrolled = group_sizes(len(self.cache.ids))

    def grouping(self, seed: int, trial: int) -> tuple[list[str], list[str]]:
        ids = self.cache.ids
        perm = np.random.default_rng([seed, trial]).permutation(len(ids))
        return [ids[k] for k in sorted(perm[: self.n_gallery])], [ids[k] for k in sorted(perm[self.n_gallery :])]

    def enroll_all(self, gallery: list[str], enrolled: list[str], seed: int, trial: int) -> dict[str, _Enrolled]:
        stats = population_stats(np.vstack([self.cache.per_scan[s] for s in gallery]), self.kcfg)
        n_enroll = self.ds.config.n_enroll
        out = {}
        for sid in enrolled:
            msgs = [encode_enroll_features(sid, self.cache.enroll[sid])]
            msgs += [encode_enroll_features(sid, c) for c in self.cache.per_scan[sid][:n_enroll]]
            pseed = _seed64(seed, trial, self.ds.subject_index(sid))
            cred, helper_msg = enrollment_session(msgs, stats, self.ecc, pseed, trusted_channel=True,
                                                  feature_cfg=self.cache.cfg, keygen_cfg=self.kcfg)
            out[sid] = _Enrolled(sid, cred, decode_helper(helper_msg))
        return out

    def attempts(self, target: _Enrolled, features: np.ndarray, rng: np.random.Generator,
                 claim: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Run each feature row through the protocol against ``target``.

        Returns (accepted, hamming distance to the enrolled key).
        """
        h = target.helper
        keys = binarize_batch(standardize(features, h.mean, h.std, h.mask), h.projection_seed, h.key_length)
        return self.key_attempts(target, keys, rng, claim)

    def key_attempts(self, target: _Enrolled, keys: np.ndarray, rng: np.random.Generator,
                     claim: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        from .keygen import BiometricKey

        claim = target.user_id if claim is None else claim
        acc = np.zeros(keys.shape[0], bool)
        for j, k in enumerate(keys):
            commitment, _ = commit(BiometricKey(k), self.code, rng)
            msg = encode_auth_commit(claim, self.ecc, commitment).to_bytes()
            acc[j] = verifier_session(msg, target.credential).accepted
        dist = np.count_nonzero(keys != target.credential.key.bits, axis=1)
        return acc, dist


def evaluate(ds: dsmod.Dataset, ecc: str = "bch255", grouping_seed: int = 0, n_trials: int = 20,
             cache: FeatureCache | None = None, keygen_cfg: KeygenConfig | None = None) -> EvalReport:
    """Genuine and passive cross-user attempts over regrouped galleries.

    Every attempt goes through commit, the wire encoding and the verifier;
    decisions are cross-checked against the raw Hamming distance.
    """
    run = _Runner(ds, ecc, cache, keygen_cfg)
    t = run.code.t
    g_bits, i_bits, per_trial = [], [], []
    mismatches = 0
    retained = []
    for trial in range(n_trials):
        gallery, enrolled = run.grouping(grouping_seed, trial)
        users = run.enroll_all(gallery, enrolled, grouping_seed, trial)
        rng = np.random.default_rng([grouping_seed, trial, 0xC0])
        g_acc, i_acc = [], []
        for v in enrolled:
            retained.append(int(users[v].helper.mask.sum()))
            for a in enrolled:
                acc, dist = run.attempts(users[v], run.cache.auth[a], rng)
                mismatches += int(np.count_nonzero(acc != (dist <= t)))
                if a == v:
                    g_acc.append(acc)
                    g_bits.extend(dist.tolist())
                else:
                    i_acc.append(acc)
                    i_bits.extend(dist.tolist())
        g_acc, i_acc = np.concatenate(g_acc), np.concatenate(i_acc)
        frr, far = 1.0 - g_acc.mean(), i_acc.mean()
        per_trial.append({"trial": trial, "frr": float(frr), "far": float(far), "gallery": gallery,
                          "enrolled": enrolled})
        logger.info("trial %d: FRR %.4f FAR %.4f", trial, frr, far)
    L = run.code.n
    curve = sweep_rates(np.asarray(g_bits) / L, np.asarray(i_bits) / L, L)
    frr = float(np.mean([p["frr"] for p in per_trial]))
    far = float(np.mean([p["far"] for p in per_trial]))
    return EvalReport(ecc, ErrorRates.at(frr, far, curve.eer, t), n_trials, run.n_gallery, run.n_enrolled,
                      len(g_bits), len(i_bits), mismatches, g_bits, i_bits, per_trial,
                      float(np.mean(retained)))


@dataclass
class AttackReport:
    ecc: str
    p_asr: float
    s_asr: float
    u_asr: float
    k_asr: float
    ft_rate: float
    trials: dict  # attempts per cell
    successes: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def meets_targets(self) -> bool:
        asr = (self.p_asr, self.s_asr, self.u_asr, self.k_asr)
        return max(asr) <= TARGET_ASR and self.ft_rate <= TARGET_FT


def attack_suite(ds: dsmod.Dataset, ecc: str = "bch255", grouping_seed: int = 0, n_trials: int = 20,
                 cache: FeatureCache | None = None, keygen_cfg: KeygenConfig | None = None) -> AttackReport:
    """Passive, silicon, universal, key-substitution and false-trigger attacks."""
    run = _Runner(ds, ecc, cache, keygen_cfg)
    missing = [k for k in dsmod.ATTACK_KINDS if k not in run.cache.attacks]
    if missing:
        raise ValueError(f"dataset has no attack corpora for {missing}; regenerate with --attacks")
    cells = {"passive": "Passive", "synthetic": "Synthetic", "universal": "Universal",
             "key": "Key", "false_trigger": "FalseTrigger"}
    succ = {c: 0 for c in cells}
    tried = {c: 0 for c in cells}
    for trial in range(n_trials):
        gallery, enrolled = run.grouping(grouping_seed, trial)
        users = run.enroll_all(gallery, enrolled, grouping_seed, trial)
        rng = np.random.default_rng([grouping_seed, trial, 0xA7])
        for v in enrolled:
            victim = users[v]
            for cell, feats in (("passive", np.vstack([run.cache.auth[a] for a in enrolled if a != v])),
                                ("synthetic", run.cache.attacks["Synthetic"]),
                                ("universal", run.cache.attacks["Universal"]),
                                ("false_trigger", run.cache.attacks["FalseTrigger"])):
                acc, _ = run.attempts(victim, feats, rng)
                succ[cell] += int(acc.sum())
                tried[cell] += acc.size
            # attacker submits their own enrolled key against the victim's credential
            own = np.vstack([users[a].credential.key.bits for a in enrolled if a != v])
            acc, _ = run.key_attempts(victim, own, rng)
            succ["key"] += int(acc.sum())
            tried["key"] += acc.size
    rate = {c: succ[c] / tried[c] for c in cells}
    return AttackReport(ecc, rate["passive"], rate["synthetic"], rate["universal"], rate["key"],
                        rate["false_trigger"], tried, succ)


def random_key_attempts(credential: EnrolledCredential, n: int, rng: np.random.Generator) -> int:
    """Accepted commitments out of ``n`` built from uniformly random keys."""
    code = get_code(credential.ecc)
    from .keygen import BiometricKey

    hits = 0
    for _ in range(n):
        commitment, _ = commit(BiometricKey(rng.integers(0, 2, code.n, dtype=np.uint8)), code, rng)
        msg = encode_auth_commit(credential.user_id, credential.ecc, commitment)
        hits += verifier_session(msg, credential).accepted
    return hits


@dataclass
class DriftReport:
    ecc: str
    mode: str
    threshold_bits: int
    periods: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)

    def meets_targets(self) -> bool:
        return all(p["genuine_within_t"] >= TARGET_DRIFT_GENUINE and p["passive_bits"]["min_bits"] > TARGET_DRIFT_PASSIVE_BITS
                   for p in self.periods)


def default_drift(base_jitter: float, period: int, rate: float = 0.05) -> float:
    return base_jitter * (1.0 + rate * period)


def drift_eval(ds: dsmod.Dataset, ecc: str = "bch255", periods: int = 5, mode: str = "day",
               attempts: int = 5, drift_rate: float = 0.05, grouping_seed: int = 0,
               cache: FeatureCache | None = None, keygen_cfg: KeygenConfig | None = None) -> DriftReport:
    """Fresh attempts per period under growing wear jitter.

    ``day`` keeps the Quiet condition; ``session`` cycles the noise
    conditions across periods. Enrollment uses the dataset's scans; the
    attempts are regenerated from each subject's ground-truth profile, each
    one a new insertion.
    """
    if mode not in ("day", "session"):
        raise ValueError("mode must be 'day' or 'session'")
    run = _Runner(ds, ecc, cache, keygen_cfg)
    gallery, enrolled = run.grouping(grouping_seed, 0)
    users = run.enroll_all(gallery, enrolled, grouping_seed, 0)
    cfg = ds.config
    ex = dsmod.excitation_for(cfg)
    fcfg = run.cache.cfg
    t = run.code.t
    out = []
    for p in range(periods):
        jitter = default_drift(cfg.synth.wear_jitter, p, drift_rate)
        noise = "Quiet" if mode == "day" else NOISE_CONDITIONS[p % len(NOISE_CONDITIONS)]
        feats = {}
        for sid in enrolled:
            idx = ds.subject_index(sid)
            prof = ds.profile(sid)
            rows = []
            for a in range(attempts):
                scans = [synth.scan(prof, ex, noise, jitter, synth._rng_for(cfg.population_seed, idx, p, a, k, 0xD720),
                                    k, cfg.synth.ir_window,
                                    insertion_rng=synth._rng_for(cfg.population_seed, idx, p, a, 0xD71F))
                         for k in range(AUTH_SCANS)]
                rows.append(extract_features(scans, fcfg).coefficients)
            feats[sid] = np.vstack(rows)
        g, i = [], []
        for v in enrolled:
            h = users[v].helper
            for a in enrolled:
                keys = binarize_batch(standardize(feats[a], h.mean, h.std, h.mask), h.projection_seed, h.key_length)
                d = np.count_nonzero(keys != users[v].credential.key.bits, axis=1)
                (g if a == v else i).extend(d.tolist())
        g, i = np.asarray(g), np.asarray(i)
        out.append({
            "period": p,
            "wear_jitter": round(jitter, 9),
            "noise_condition": noise,
            "genuine_bits": _summary(g, run.code.n),
            "passive_bits": _summary(i, run.code.n),
            "genuine_within_t": float(np.mean(g <= t)),
            "passive_within_t": float(np.mean(i <= t)),
            "genuine_raw": g.tolist(),
        })
    return DriftReport(ecc, mode, t, out)


def mean_abs_offdiag_corr(X) -> float:
    """Mean |Pearson correlation| over distinct column pairs of ``X``."""
    C = np.corrcoef(np.asarray(X, float), rowvar=False)
    off = ~np.eye(C.shape[0], dtype=bool)
    return float(np.mean(np.abs(C[off])))


def feature_correlation_check(ds: dsmod.Dataset, cache: FeatureCache | None = None) -> dict:
    """Cepstral vs raw band-magnitude cross-correlation over the population."""
    cache = cache or FeatureCache(ds)
    ceps = np.vstack([cache.per_scan[s] for s in cache.ids])
    mags = np.vstack([band_magnitudes(ds.responses(s), cache.cfg) for s in cache.ids])
    return {"cepstrum": mean_abs_offdiag_corr(ceps), "band_magnitude": mean_abs_offdiag_corr(mags)}
