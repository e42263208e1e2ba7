import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earid.ecc import CODE_PARAMS, DecodeFailure, GF2m, bits_to_int, get_code, int_to_bits

NAMES = sorted(CODE_PARAMS)


# independent GF(2^m) arithmetic by shift-and-reduce
def _gf_mul(a, b, m, poly):
    out = 0
    while b:
        if b & 1:
            out ^= a
        b >>= 1
        a <<= 1
        if a >> m:
            a ^= poly
    return out


def _gf_pow(a, e, m, poly):
    out = 1
    for _ in range(e):
        out = _gf_mul(out, a, m, poly)
    return out


def _poly_eval(bits_int, x, m, poly):
    acc, p, i = 0, 1, 0
    while bits_int >> i:
        if (bits_int >> i) & 1:
            acc ^= p
        p = _gf_mul(p, x, m, poly)
        i += 1
    return acc


def _oracle_encode(msg_bits, code):
    # long division over GF(2) on python lists, highest degree first
    n, k = code.n, code.k
    g = [(code.generator >> i) & 1 for i in range(n - k, -1, -1)]
    dividend = list(reversed(list(msg_bits))) + [0] * (n - k)
    rem = dividend[:]
    for i in range(k):
        if rem[i]:
            for j, gj in enumerate(g):
                rem[i + j] ^= gj
    parity = rem[k:]
    word = list(reversed(parity)) + list(msg_bits)
    return np.array(word, dtype=np.uint8)


@pytest.mark.parametrize("name", NAMES)
def test_parameters(name):
    code = get_code(name)
    m, k, t = CODE_PARAMS[name]
    assert code.n == 2**m - 1
    assert code.k == k and code.t == t
    assert code.generator.bit_length() - 1 == code.n - code.k


def test_designed_capability():
    assert get_code("bch127").t_design == 10
    assert get_code("bch255").t_design == 19
    assert get_code("bch511").t_design == 36


@pytest.mark.parametrize("name", NAMES)
def test_generator_roots(name):
    code = get_code(name)
    poly = code.field.prim_poly
    for i in range(1, 2 * code.t_design + 1):
        root = _gf_pow(2, i, code.m, poly)
        assert _poly_eval(code.generator, root, code.m, poly) == 0


def test_field_tables_match_oracle():
    gf = GF2m(8)
    rng = np.random.default_rng(0)
    for a, b in rng.integers(0, 256, (500, 2)):
        assert gf.mul(int(a), int(b)) == _gf_mul(int(a), int(b), 8, gf.prim_poly)


def test_non_primitive_polynomial_rejected():
    with pytest.raises(ValueError):
        GF2m(4, 0b11111)


def test_unknown_code():
    with pytest.raises(ValueError, match="unknown ECC"):
        get_code("bch63")


@pytest.mark.parametrize("name", NAMES)
def test_zero_message(name):
    code = get_code(name)
    assert not code.encode(np.zeros(code.k, np.uint8)).any()


@pytest.mark.parametrize("name", NAMES)
def test_encode_matches_long_division(name, rng):
    code = get_code(name)
    for _ in range(20):
        msg = rng.integers(0, 2, code.k, dtype=np.uint8)
        cw = code.encode(msg)
        np.testing.assert_array_equal(cw, _oracle_encode(msg, code))
        np.testing.assert_array_equal(cw[code.n - code.k :], msg)
        assert not any(code.syndromes(cw))


@pytest.mark.parametrize("name", NAMES)
def test_linearity(name, rng):
    code = get_code(name)
    for _ in range(50):
        a = rng.integers(0, 2, code.k, dtype=np.uint8)
        b = rng.integers(0, 2, code.k, dtype=np.uint8)
        np.testing.assert_array_equal(code.encode(a ^ b), code.encode(a) ^ code.encode(b))


@pytest.mark.parametrize("name", NAMES)
def test_minimum_distance_sampled(name, rng):
    code = get_code(name)
    for _ in range(1000):
        a = rng.integers(0, 2, code.k, dtype=np.uint8)
        b = rng.integers(0, 2, code.k, dtype=np.uint8)
        d = int(np.count_nonzero(code.encode(a) ^ code.encode(b)))
        assert d == 0 or d >= 2 * code.t_design + 1


@pytest.mark.parametrize("name", NAMES)
def test_round_trip_exactly_t(name, rng):
    code = get_code(name)
    for _ in range(1000):
        msg = rng.integers(0, 2, code.k, dtype=np.uint8)
        word = code.encode(msg)
        word[rng.choice(code.n, code.t, replace=False)] ^= 1
        np.testing.assert_array_equal(code.decode(word), msg)


@pytest.mark.parametrize("name", NAMES)
def test_t_plus_one_never_silently_correct(name, rng):
    code = get_code(name)
    for _ in range(300):
        msg = rng.integers(0, 2, code.k, dtype=np.uint8)
        word = code.encode(msg)
        word[rng.choice(code.n, code.t + 1, replace=False)] ^= 1
        out = code.decode(word)
        assert isinstance(out, DecodeFailure) or not np.array_equal(out, msg)


def test_exhaustive_weight_two_bch127():
    code = get_code("bch127")
    msg = np.random.default_rng(5).integers(0, 2, code.k, dtype=np.uint8)
    cw = code.encode(msg)
    patterns = itertools.chain([()], ((i,) for i in range(code.n)), itertools.combinations(range(code.n), 2))
    for pos in patterns:
        word = cw.copy()
        word[list(pos)] ^= 1
        np.testing.assert_array_equal(code.decode(word), msg)


def test_bch511_capped_at_thirty():
    code = get_code("bch511")
    rng = np.random.default_rng(3)
    msg = rng.integers(0, 2, code.k, dtype=np.uint8)
    word = code.encode(msg)
    word[rng.choice(code.n, 31, replace=False)] ^= 1
    assert isinstance(code.decode(word), DecodeFailure)


def test_decode_failure_is_returned():
    code = get_code("bch127")
    word = np.zeros(code.n, np.uint8)
    word[:40] = 1
    out = code.decode(word)
    assert isinstance(out, DecodeFailure) or out.size == code.k


def test_length_checks():
    code = get_code("bch127")
    with pytest.raises(ValueError):
        code.encode(np.zeros(code.k + 1, np.uint8))
    with pytest.raises(ValueError):
        code.decode(np.zeros(code.n - 1, np.uint8))
    with pytest.raises(ValueError):
        code.encode(np.full(code.k, 2))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**300), st.integers(min_value=1, max_value=320))
def test_bit_helpers_round_trip(value, length):
    value &= (1 << length) - 1
    assert bits_to_int(int_to_bits(value, length)) == value


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(NAMES), st.integers(min_value=0, max_value=2**32 - 1), st.data())
def test_decode_within_t_property(name, seed, data):
    code = get_code(name)
    rng = np.random.default_rng(seed)
    w = data.draw(st.integers(min_value=0, max_value=code.t))
    msg = rng.integers(0, 2, code.k, dtype=np.uint8)
    word = code.encode(msg)
    word[rng.choice(code.n, w, replace=False)] ^= 1
    np.testing.assert_array_equal(code.decode(word), msg)
