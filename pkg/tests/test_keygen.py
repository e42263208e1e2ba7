import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from earid.config import FeatureConfig, KeygenConfig
from earid.ecc import get_code
from earid.keygen import (
    BiometricKey,
    HelperData,
    biometric_information,
    binarize_batch,
    enroll,
    enroll_from_features,
    estimate_distribution,
    extract_key,
    key_from_feature,
    otsu_mask,
    otsu_threshold,
    population_stats,
    project_and_binarize,
    projection_matrix,
    quantize_levels,
    standardize,
)

EPS = 1e-6


def renyi_oracle(P, Q, alpha):
    total = 0.0
    for p, q in zip(P, Q):
        if p > 0:
            total += p**alpha * q ** (1 - alpha)
    return math.log2(total) / (alpha - 1)


def otsu_oracle(values, levels=256):
    """Exhaustive between-class variance search with exact arithmetic."""
    v = [float(x) for x in values]
    lo, hi = min(v), max(v)
    q = [min(levels - 1, max(0, math.floor((x - lo) / (hi - lo) * (levels - 1)))) for x in v]
    n = len(q)
    best, best_k = Fraction(-1), None
    for k in range(levels - 1):
        c0 = [x for x in q if x <= k]
        c1 = [x for x in q if x > k]
        if not c0 or not c1:
            continue
        w0, w1 = Fraction(len(c0), n), Fraction(len(c1), n)
        mu0, mu1 = Fraction(sum(c0), len(c0)), Fraction(sum(c1), len(c1))
        score = w0 * w1 * (mu1 - mu0) ** 2
        if score > best:
            best, best_k = score, k
    return best_k, [x > best_k for x in q]


def _random_hist(rng, n_bins, zero_frac=0.3):
    p = rng.random(n_bins)
    p[rng.random(n_bins) < zero_frac] = 0
    if p.sum() == 0:
        p[0] = 1
    return p / p.sum()


def _smooth(q):
    return (q + EPS) / (1 + q.size * EPS)


# estimate_distribution

def test_indicator_at_bin_center():
    edges = np.linspace(0, 4, 5)
    np.testing.assert_array_equal(estimate_distribution([2.5], edges), [0, 0, 1, 0])


def test_uniform_samples():
    edges = np.linspace(0, 1, 33)
    p = estimate_distribution(np.random.default_rng(0).random(100_000), edges)
    dev = np.abs(p * 32 - 1)
    assert dev.mean() < 0.05 and dev.max() < 0.10


def test_smoothing_of_empty_bin():
    edges = np.linspace(0, 1, 33)
    q = estimate_distribution(np.full(50, 0.01), edges, smoothing=EPS)
    assert q[5] == pytest.approx(EPS / (1 + 32 * EPS), rel=1e-12)
    assert q.sum() == pytest.approx(1.0, abs=1e-12)


def test_out_of_range_clamped():
    edges = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(estimate_distribution([-5, 9], edges), [0.5, 0, 0, 0.5])


def test_estimate_distribution_errors():
    with pytest.raises(ValueError):
        estimate_distribution([], np.linspace(0, 1, 5))
    with pytest.raises(ValueError):
        estimate_distribution([0.5], [0, 1])


def test_population_stats_invariants():
    x = np.random.default_rng(0).standard_normal((500, 12))
    x[:, 3] = 1.0
    stats = population_stats(x)
    np.testing.assert_allclose(stats.q.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(stats.q > 0) and np.all(stats.std > 0)
    assert stats.n_bins == 32 and stats.n_dims == 12
    np.testing.assert_allclose(stats.edges[:, 0], stats.mean - 4 * stats.std)


def test_population_histogram_matches_estimate_distribution():
    x = np.random.default_rng(3).standard_normal((300, 4))
    stats = population_stats(x)
    for j in range(4):
        np.testing.assert_allclose(stats.q[j], estimate_distribution(x[:, j], stats.edges[j], EPS), atol=1e-12)


# biometric_information

def test_divergence_identity():
    rng = np.random.default_rng(1)
    for _ in range(50):
        P = _smooth(_random_hist(rng, 8))
        for alpha in (0.0, 0.25, 0.5, 1.0, 2.0):
            assert abs(biometric_information(P, P, alpha)) < 1e-12


def test_d0_two_bins():
    assert biometric_information([1.0, 0.0], [0.5, 0.5], 0.0) == pytest.approx(1.0)


def test_half_order_against_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        P, Q = _random_hist(rng, 8), _smooth(_random_hist(rng, 8))
        assert biometric_information(P, Q, 0.5) == pytest.approx(renyi_oracle(P, Q, 0.5), abs=1e-9)


def test_kl_special_case():
    P, Q = np.array([0.5, 0.5, 0.0]), np.array([0.25, 0.25, 0.5])
    assert biometric_information(P, Q, 1.0) == pytest.approx(1.0)


def test_divergence_errors():
    with pytest.raises(ValueError):
        biometric_information([1.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        biometric_information([1.0, 0.0], [0.5, 0.5], -1.0)


def test_divergence_nonnegative_and_d0_limit():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(2, 33))
        P, Q = _random_hist(rng, n), _smooth(_random_hist(rng, n))
        for alpha in (0.0, 0.25, 0.5, 2.0):
            assert biometric_information(P, Q, alpha) >= -1e-12
        assert biometric_information(P, Q, 0.0) == pytest.approx(biometric_information(P, Q, 1e-6), abs=1e-3)


def test_divergence_vectorized():
    rng = np.random.default_rng(5)
    P = np.vstack([_random_hist(rng, 8) for _ in range(6)])
    Q = np.vstack([_smooth(_random_hist(rng, 8)) for _ in range(6)])
    out = biometric_information(P, Q, 0.0)
    assert out.shape == (6,)
    for i in range(6):
        assert out[i] == pytest.approx(-math.log2(Q[i][P[i] > 0].sum()), abs=1e-12)


# otsu

def test_otsu_two_clusters():
    np.testing.assert_array_equal(otsu_mask([0, 0, 0, 10, 10]), [0, 0, 0, 1, 1])


def test_otsu_all_equal_warns():
    with pytest.warns(UserWarning):
        assert otsu_mask([3.0] * 6).all()


def test_otsu_too_short():
    with pytest.raises(ValueError):
        otsu_mask([1.0])


def test_otsu_against_oracle_examples():
    rng = np.random.default_rng(6)
    for _ in range(30):
        v = rng.exponential(2.0, int(rng.integers(2, 80)))
        k, want = otsu_oracle(v)
        assert otsu_threshold(v)[0] == k
        np.testing.assert_array_equal(otsu_mask(v), want)


def test_otsu_tau_splits_values():
    v = np.random.default_rng(7).random(100)
    k, tau = otsu_threshold(v)
    q = quantize_levels(v)
    np.testing.assert_array_equal(q > k, v >= tau - 1e-12)


_values = arrays(np.float64, st.integers(2, 64), elements=st.floats(0, 20, allow_nan=False)).filter(
    lambda v: v.max() > v.min())


@settings(max_examples=60, deadline=None)
@given(_values)
def test_otsu_matches_oracle(v):
    np.testing.assert_array_equal(otsu_mask(v), otsu_oracle(v)[1])


# shift and scale are exact on dyadic grids; arbitrary floats can move a value across a level boundary
_grid = arrays(np.int64, st.integers(2, 64), elements=st.integers(0, 255)).filter(lambda v: v.max() > v.min())


@settings(max_examples=60, deadline=None)
@given(_grid, st.integers(-64, 64), st.integers(0, 6))
def test_otsu_shift_and_scale_invariant(v, shift, log_scale):
    base = otsu_mask(v.astype(float))
    np.testing.assert_array_equal(otsu_mask(v + float(shift)), base)
    np.testing.assert_array_equal(otsu_mask(v * 2.0**log_scale), base)


# standardize / projection

def test_standardize_examples():
    mean, std = np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 0.5])
    np.testing.assert_array_equal(standardize(mean, mean, std), np.zeros(3))
    c = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(standardize(c, np.zeros(3), np.ones(3)), c)
    mask = np.array([True, False, True])
    np.testing.assert_allclose(standardize(c, mean, std, mask), [(0.3 - 1) / 1, (4 - 3) / 0.5])
    np.testing.assert_allclose(standardize(c, mean[mask], std[mask], mask), standardize(c, mean, std, mask))


def test_standardize_errors():
    with pytest.raises(ValueError):
        standardize(np.ones(3), np.zeros(3), np.ones(3), np.ones(4, bool))
    with pytest.raises(ValueError):
        standardize(np.ones(3), np.zeros(2), np.ones(2))


def test_standardized_population_moments():
    x = np.random.default_rng(8).normal(5.0, 3.0, (2000, 6))
    stats = population_stats(x)
    z = standardize(x, stats.mean, stats.std)
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=0.05)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=0.05)


def test_projection_determinism_and_shape():
    R = projection_matrix(42, 255, 10)
    assert R.shape == (255, 10)
    np.testing.assert_array_equal(R, projection_matrix(42, 255, 10))
    assert not np.array_equal(R, projection_matrix(43, 255, 10))
    assert not np.array_equal(R[:, :9], projection_matrix(42, 255, 9))
    assert abs(R.mean()) < 0.1 and abs(R.std() - 1) < 0.05
    with pytest.raises(ValueError):
        projection_matrix(1, 127, 0)


def test_projection_frozen_values():
    # pinned so any reimplementation of the generator can be checked
    from scipy.special import ndtri

    bg = np.random.Philox(key=np.array([7, (127 << 32) | 3], dtype=np.uint64))
    w = bg.random_raw(3)
    want = ndtri(((w >> np.uint64(11)).astype(float) + 0.5) / 2.0**53)
    np.testing.assert_array_equal(projection_matrix(7, 127, 3)[0], want)


def test_binarize_examples():
    assert project_and_binarize(np.zeros(5), 3, 127).bits.all()
    x = np.random.default_rng(9).standard_normal(12)
    a, b = project_and_binarize(x, 3, 255), project_and_binarize(x, 3, 255)
    np.testing.assert_array_equal(a.bits, b.bits)
    assert a.key_length == 255
    np.testing.assert_array_equal(project_and_binarize(-x, 3, 255).bits, 1 - a.bits)
    np.testing.assert_array_equal(binarize_batch(x[None], 3, 255)[0], a.bits)


def test_bit_balance_random_x():
    rng = np.random.default_rng(10)
    frac = np.mean([project_and_binarize(rng.standard_normal(16), seed, 255).bits.mean() for seed in range(200)])
    assert 0.45 <= frac <= 0.55


def test_key_bytes_round_trip():
    bits = np.random.default_rng(11).integers(0, 2, 511).astype(np.uint8)
    k = BiometricKey(bits)
    np.testing.assert_array_equal(BiometricKey.from_bytes(k.to_bytes()).bits, bits)
    with pytest.raises(ValueError):
        BiometricKey.from_bytes(k.to_bytes()[:-1])


def _helper(d=20, L=255):
    mask = np.zeros(d, bool)
    mask[[1, 4, 7]] = True
    return HelperData(mask, 2**63 + 5, L, np.arange(3, dtype=np.float32), np.ones(3, np.float32), FeatureConfig().digest())


def test_helper_round_trip():
    h = _helper()
    g = HelperData.from_bytes(h.to_bytes())
    np.testing.assert_array_equal(g.mask, h.mask)
    np.testing.assert_array_equal(g.mean, h.mean)
    assert (g.projection_seed, g.key_length, g.config_hash) == (h.projection_seed, h.key_length, h.config_hash)


def test_helper_validation():
    blob = _helper().to_bytes()
    with pytest.raises(ValueError):
        HelperData.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        HelperData.from_bytes(blob[:-3])
    with pytest.raises(ValueError):
        _helper(L=128)
    with pytest.raises(ValueError):
        HelperData(np.zeros(5, bool), 0, 127, np.zeros(0, np.float32), np.zeros(0, np.float32))


# enrollment on the calibrated population

def _gallery_stats(cache, exclude):
    return population_stats(np.vstack([cache.per_scan[s] for s in cache.ids if s not in exclude]))


def test_enroll_deterministic_and_extract_matches(default_dataset, default_cache):
    sid = default_cache.ids[0]
    stats = _gallery_stats(default_cache, {sid})
    scans = list(default_dataset.responses(sid)[:8])
    k1, h1 = enroll(scans, stats, 255, 99)
    k2, h2 = enroll(scans, stats, 255, 99)
    np.testing.assert_array_equal(k1.bits, k2.bits)
    assert h1.to_bytes() == h2.to_bytes()
    np.testing.assert_array_equal(extract_key(scans, h1).bits, k1.bits)
    assert KeygenConfig().alpha == 0


def test_enroll_refuses_single_scan(default_dataset, default_cache):
    sid = default_cache.ids[0]
    stats = _gallery_stats(default_cache, {sid})
    with pytest.raises(ValueError):
        enroll(list(default_dataset.responses(sid)[:1]), stats)


def test_extract_key_config_mismatch(default_dataset, default_cache):
    sid = default_cache.ids[0]
    stats = _gallery_stats(default_cache, {sid})
    scans = list(default_dataset.responses(sid)[:8])
    _, helper = enroll(scans, stats, 255, 1)
    with pytest.raises(ValueError):
        extract_key(scans, helper, FeatureConfig(f_low=1000.0))


def _population_keys(cache, L=255, n_pairs=20, seed=0):
    rng = np.random.default_rng(seed)
    ids = cache.ids
    out = []
    for _ in range(n_pairs):
        a, b = rng.choice(len(ids), 2, replace=False)
        ua, ub = ids[a], ids[b]
        stats = _gallery_stats(cache, {ua, ub})
        ka, ha = enroll_from_features(cache.enroll[ua], cache.per_scan[ua][:8], stats, L, 1000 + a)
        kb, hb = enroll_from_features(cache.enroll[ub], cache.per_scan[ub][:8], stats, L, 1000 + a)
        out.append((ua, ub, ka, ha, kb, hb))
    return out


def test_inter_user_key_distance(default_cache):
    dists = [np.count_nonzero(ka.bits != kb.bits) for _, _, ka, _, kb, _ in _population_keys(default_cache)]
    assert np.mean(np.array(dists) > 0.15 * 255) >= 0.99


def test_impostor_ber_distribution(default_cache):
    # random projection makes impostor BER symmetric around 0.5
    bers = []
    for ua, ub, ka, ha, _, _ in _population_keys(default_cache, n_pairs=100, seed=1):
        for c in default_cache.auth[ub]:
            bers.append(np.mean(key_from_feature(c, ha).bits != ka.bits))
    bers = np.array(bers)
    assert 0.15 <= np.median(bers) <= 0.55
    assert 0.4 <= bers.mean() <= 0.55
    assert np.mean(bers >= 0.15) >= 0.9


def test_genuine_ber_within_capacity(default_cache):
    code = get_code("bch255")
    ok = []
    for ua, _, ka, ha, _, _ in _population_keys(default_cache, n_pairs=20, seed=2):
        for c in default_cache.auth[ua]:
            ok.append(np.count_nonzero(key_from_feature(c, ha).bits != ka.bits) <= code.t)
    assert np.mean(ok) >= 0.97


def test_population_bit_balance(default_cache):
    keys = [ka.bits for _, _, ka, _, kb, _ in _population_keys(default_cache, n_pairs=20, seed=3)]
    assert 0.45 <= np.mean(keys) <= 0.55
