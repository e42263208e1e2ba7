"""Biometric information, Otsu feature masking and random-projection keys."""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

from .config import FeatureConfig, KeygenConfig
from .features import extract_features

logger = logging.getLogger(__name__)

KEY_LENGTHS = (127, 255, 511)
HELPER_MAGIC = b"EIDH"
HELPER_VERSION = 1


@dataclass(frozen=True)
class PopulationStats:
    mean: np.ndarray
    std: np.ndarray
    edges: np.ndarray  # (d, n_bins + 1)
    q: np.ndarray  # (d, n_bins), smoothed

    @property
    def n_dims(self) -> int:
        return self.mean.size

    @property
    def n_bins(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class BiometricKey:
    bits: np.ndarray

    @property
    def key_length(self) -> int:
        return self.bits.size

    def to_bytes(self) -> bytes:
        return struct.pack("<H", self.key_length) + np.packbits(self.bits, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "BiometricKey":
        (n,) = struct.unpack_from("<H", blob)
        nbytes = (n + 7) // 8
        if len(blob) != 2 + nbytes:
            raise ValueError("key blob has wrong length")
        bits = np.unpackbits(np.frombuffer(blob, np.uint8, nbytes, 2), bitorder="little")[:n]
        return cls(bits.astype(np.uint8))


@dataclass(frozen=True)
class HelperData:
    mask: np.ndarray  # bool, length d
    projection_seed: int
    key_length: int
    mean: np.ndarray = field(repr=False)  # float32, retained dims only
    std: np.ndarray = field(repr=False)
    config_hash: bytes = b"\x00" * 8

    def __post_init__(self):
        if self.key_length not in KEY_LENGTHS:
            raise ValueError(f"key length must be one of {KEY_LENGTHS}")
        if int(np.count_nonzero(self.mask)) < 1:
            raise ValueError("mask must retain at least one dimension")
        if self.mean.size != np.count_nonzero(self.mask) or self.std.size != self.mean.size:
            raise ValueError("stats must cover exactly the retained dimensions")
        if len(self.config_hash) != 8:
            raise ValueError("config hash must be 8 bytes")

    def to_bytes(self) -> bytes:
        d = self.mask.size
        out = [
            HELPER_MAGIC,
            struct.pack("<BHH", HELPER_VERSION, self.key_length, d),
            np.packbits(self.mask.astype(np.uint8), bitorder="little").tobytes(),
            struct.pack("<Q", self.projection_seed),
            np.column_stack([self.mean, self.std]).astype("<f4").tobytes(),
            self.config_hash,
        ]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "HelperData":
        if blob[:4] != HELPER_MAGIC:
            raise ValueError("bad helper magic")
        version, L, d = struct.unpack_from("<BHH", blob, 4)
        if version != HELPER_VERSION:
            raise ValueError(f"unsupported helper version {version}")
        off = 9
        mbytes = (d + 7) // 8
        mask = np.unpackbits(np.frombuffer(blob, np.uint8, mbytes, off), bitorder="little")[:d].astype(bool)
        off += mbytes
        (seed,) = struct.unpack_from("<Q", blob, off)
        off += 8
        dp = int(mask.sum())
        if len(blob) != off + 8 * dp + 8:
            raise ValueError("helper blob has wrong length")
        pairs = np.frombuffer(blob, "<f4", 2 * dp, off).reshape(dp, 2)
        off += 8 * dp
        return cls(mask, seed, L, pairs[:, 0].astype(np.float32), pairs[:, 1].astype(np.float32), blob[off : off + 8])


def estimate_distribution(samples, bin_edges, smoothing: float | None = None) -> np.ndarray:
    """Normalized histogram; out-of-range samples land in the boundary bins.

    With ``smoothing`` (eps), every bin gets eps added before renormalizing.
    """
    x = np.asarray(samples, float).ravel()
    edges = np.asarray(bin_edges, float)
    n_bins = edges.size - 1
    if x.size < 1:
        raise ValueError("need at least one sample")
    if n_bins < 2:
        raise ValueError("need at least two bins")
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    p = np.bincount(idx, minlength=n_bins).astype(float) / x.size
    if smoothing:
        p = (p + smoothing) / (1.0 + n_bins * smoothing)
    return p


def _histograms(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Per-dimension histograms of values (n, d) on uniform edges (d, B+1)."""
    n, d = values.shape
    n_bins = edges.shape[1] - 1
    width = (edges[:, -1] - edges[:, 0]) / n_bins
    idx = np.floor((values - edges[:, 0]) / width).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 1)
    flat = idx + n_bins * np.arange(d)
    return np.bincount(flat.ravel(), minlength=d * n_bins).reshape(d, n_bins) / n


def population_stats(features, config: KeygenConfig | None = None) -> PopulationStats:
    """Mean, std and smoothed histograms from gallery features, shape (n, d)."""
    cfg = config or KeygenConfig()
    x = np.asarray(features, float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a (n >= 2, d) feature matrix")
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), cfg.std_floor)
    edges = mean[:, None] + cfg.bin_span * std[:, None] * np.linspace(-1, 1, cfg.n_bins + 1)
    q = _histograms(x, edges)
    q = (q + cfg.smoothing) / (1.0 + cfg.n_bins * cfg.smoothing)
    return PopulationStats(mean, std, edges, q)


def user_distribution(features, stats: PopulationStats) -> np.ndarray:
    """Unsmoothed per-dimension histograms of a user's per-scan features."""
    return _histograms(np.atleast_2d(np.asarray(features, float)), stats.edges)


def biometric_information(P, Q, alpha: float = 0.0) -> np.ndarray:
    """Renyi divergence D_alpha(P || Q) in bits over the last axis.

    alpha == 0 uses -log2 of the Q-mass on P's support; alpha == 1 is KL.
    """
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    if P.shape != Q.shape:
        raise ValueError("P and Q must share support")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return -np.log2(np.sum(np.where(P > 0, Q, 0.0), axis=-1))
    if alpha == 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(P > 0, P * np.log2(P / Q), 0.0)
        return np.sum(terms, axis=-1)
    with np.errstate(divide="ignore"):
        s = np.sum(np.where(P > 0, P**alpha * Q ** (1 - alpha), 0.0), axis=-1)
    return np.log2(s) / (alpha - 1)


def otsu_threshold(values, levels: int = 256) -> tuple[int, float]:
    """Otsu level on a ``levels``-step quantization of the value range.

    Returns (k, tau): class 0 is quantized level <= k, and ``tau`` is the
    smallest value mapped above k. Ties go to the lowest k.
    """
    v = np.asarray(values, float)
    vmin, vmax = v.min(), v.max()
    if vmax == vmin:
        return levels - 1, float(vmax)
    q = quantize_levels(v, levels)
    hist = np.bincount(q, minlength=levels).astype(np.int64)
    lv = np.arange(levels, dtype=np.int64)
    n0 = np.cumsum(hist)[:-1]
    s0 = np.cumsum(hist * lv)[:-1]
    n, s = n0[-1] + hist[-1], s0[-1] + hist[-1] * (levels - 1)
    n1, s1 = n - n0, s - s0
    valid = (n0 > 0) & (n1 > 0)
    # w0 w1 (mu1 - mu0)^2 * n^2 == (n0 s1 - n1 s0)^2 / (n0 n1)
    num = (n0 * s1 - n1 * s0).astype(float) ** 2
    score = np.where(valid, num / np.where(valid, n0 * n1, 1), -1.0)
    k = int(np.argmax(score))
    tau = vmin + (k + 1) * (vmax - vmin) / (levels - 1)
    return k, float(tau)


def quantize_levels(values, levels: int = 256) -> np.ndarray:
    v = np.asarray(values, float)
    vmin, vmax = v.min(), v.max()
    if vmax == vmin:
        return np.zeros(v.size, dtype=np.int64)
    return np.clip(np.floor((v - vmin) / (vmax - vmin) * (levels - 1)), 0, levels - 1).astype(np.int64)


def otsu_mask(bi_values, levels: int = 256) -> np.ndarray:
    v = np.asarray(bi_values, float)
    if v.size < 2:
        raise ValueError("need at least two values")
    if v.max() == v.min():
        warnings.warn("all biometric information values equal; retaining every dimension", stacklevel=2)
        return np.ones(v.size, dtype=bool)
    k, _ = otsu_threshold(v, levels)
    return quantize_levels(v, levels) > k


def standardize(c, mean, std, mask=None, std_floor: float = 1e-9) -> np.ndarray:
    """z-score the retained dimensions, ascending dimension order.

    ``mean``/``std`` either span all d dimensions or only the retained ones.
    """
    c = np.asarray(getattr(c, "coefficients", c), float)
    mean = np.asarray(mean, float)
    std = np.maximum(np.asarray(std, float), std_floor)
    mask = np.ones(c.shape[-1], bool) if mask is None else np.asarray(mask, bool)
    if mask.size != c.shape[-1]:
        raise ValueError(f"mask length {mask.size} != feature length {c.shape[-1]}")
    if mean.size == mask.size:
        mean, std = mean[mask], std[mask]
    elif mean.size != mask.sum():
        raise ValueError("stats do not match feature dimensions")
    return (c[..., mask] - mean) / std


@lru_cache(maxsize=256)
def _projection_matrix(seed: int, L: int, d: int) -> np.ndarray:
    bitgen = np.random.Philox(key=np.array([seed, (L << 32) | d], dtype=np.uint64))
    raw = bitgen.random_raw(L * d)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    R = ndtri(u).reshape(L, d)
    R.setflags(write=False)
    return R


def projection_matrix(seed: int, L: int, d: int) -> np.ndarray:
    """L x d standard-normal matrix, a pure function of (seed, L, d).

    Philox-4x64 keyed with (seed, L << 32 | d) emits raw 64-bit words;
    the top 53 bits map to u = (w + 0.5) / 2**53 and R = Phi^-1(u),
    filled row-major.
    """
    if d < 1:
        raise ValueError("need at least one retained dimension")
    return _projection_matrix(int(seed), int(L), int(d))


def project_and_binarize(x, projection_seed: int, L: int) -> BiometricKey:
    x = np.asarray(x, float)
    y = projection_matrix(projection_seed, L, x.shape[-1]) @ x
    return BiometricKey((y >= 0).astype(np.uint8))


def binarize_batch(X, projection_seed: int, L: int) -> np.ndarray:
    """Keys for many standardized vectors at once, shape (n, L)."""
    X = np.atleast_2d(np.asarray(X, float))
    return (X @ projection_matrix(projection_seed, L, X.shape[1]).T >= 0).astype(np.uint8)


def build_helper(bi_values, stats: PopulationStats, L: int, projection_seed: int,
                 feature_cfg: FeatureConfig | None = None) -> HelperData:
    mask = otsu_mask(bi_values)
    return HelperData(
        mask=mask,
        projection_seed=int(projection_seed),
        key_length=L,
        mean=stats.mean[mask].astype(np.float32),
        std=stats.std[mask].astype(np.float32),
        config_hash=(feature_cfg or FeatureConfig()).digest(),
    )


def key_from_feature(c, helper: HelperData) -> BiometricKey:
    x = standardize(c, helper.mean, helper.std, helper.mask)
    return project_and_binarize(x, helper.projection_seed, helper.key_length)


def enroll_from_features(aggregate, per_scan, stats: PopulationStats, L: int, projection_seed: int,
                         feature_cfg: FeatureConfig | None = None,
                         keygen_cfg: KeygenConfig | None = None) -> tuple[BiometricKey, HelperData]:
    """Enrollment given the K-scan aggregate feature and per-scan features."""
    kcfg = keygen_cfg or KeygenConfig()
    per_scan = np.atleast_2d(np.asarray(per_scan, float))
    if per_scan.shape[0] < 2:
        raise ValueError("enrollment needs at least two scans")
    P = user_distribution(per_scan, stats)
    bi = biometric_information(P, stats.q, kcfg.alpha)
    helper = build_helper(bi, stats, L, projection_seed, feature_cfg)
    return key_from_feature(aggregate, helper), helper


def enroll(enroll_scans, stats: PopulationStats, L: int = 255, projection_seed: int = 0,
           feature_cfg: FeatureConfig | None = None,
           keygen_cfg: KeygenConfig | None = None) -> tuple[BiometricKey, HelperData]:
    """Mobile-side enrollment: key plus helper data for the earbuds.

    ``stats`` must come from a gallery that excludes the enrolling user.
    """
    fcfg = feature_cfg or FeatureConfig()
    scans = list(enroll_scans)
    if len(scans) < 2:
        raise ValueError("enrollment needs at least two scans")
    per_scan = np.vstack([extract_features([s], fcfg).coefficients for s in scans])
    aggregate = extract_features(scans, fcfg)
    return enroll_from_features(aggregate, per_scan, stats, L, projection_seed, fcfg, keygen_cfg)


def extract_key(auth_scans, helper: HelperData, feature_cfg: FeatureConfig | None = None) -> BiometricKey:
    """Earbud-side key regeneration; needs only the scans and helper data."""
    fcfg = feature_cfg or FeatureConfig()
    if helper.config_hash != fcfg.digest():
        raise ValueError("helper data was built for a different feature configuration")
    return key_from_feature(extract_features(list(auth_scans), fcfg), helper)
