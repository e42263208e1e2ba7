"""Binary narrow-sense primitive BCH codes over GF(2^m), m in {7, 8, 9}.

Bit order is fixed: codeword bit ``i`` is the coefficient of ``x**i``.
Encoding is systematic, with the message occupying the high positions
``n - k .. n - 1`` and parity the low ``n - k`` positions.

Decoding is bounded-distance: syndromes, Berlekamp-Massey, Chien search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# Primitive polynomials, bit i = coefficient of x^i.
PRIMITIVE_POLYS = {
    7: 0b10001001,  # x^7 + x^3 + 1
    8: 0b100011101,  # x^8 + x^4 + x^3 + x^2 + 1
    9: 0b1000010001,  # x^9 + x^4 + 1
}

# name -> (m, k, accepted error weight)
CODE_PARAMS = {
    "bch127": (7, 64, 10),
    "bch255": (8, 123, 19),
    "bch511": (9, 241, 30),
}


class GF2m:
    """Log/antilog tables for GF(2^m)."""

    def __init__(self, m: int, prim_poly: int | None = None):
        self.m = m
        self.n = (1 << m) - 1
        self.prim_poly = PRIMITIVE_POLYS[m] if prim_poly is None else prim_poly
        exp = np.zeros(2 * self.n, dtype=np.int64)
        log = np.full(self.n + 1, -1, dtype=np.int64)
        x = 1
        for i in range(self.n):
            exp[i] = x
            if log[x] != -1:
                raise ValueError(f"polynomial {self.prim_poly:#x} is not primitive")
            log[x] = i
            x <<= 1
            if x >> m:
                x ^= self.prim_poly
        exp[self.n :] = exp[: self.n]
        self.exp = exp
        self.log = log
        # plain lists are faster than numpy scalars inside the BM loop
        self._exp = exp.tolist()
        self._log = log.tolist()

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self._exp[self._log[a] + self._log[b]]

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("0 has no inverse in GF(2^m)")
        return self._exp[(self.n - self._log[a]) % self.n]

    def pow_alpha(self, e: int) -> int:
        return self._exp[e % self.n]


def _cyclotomic_coset(i: int, n: int) -> list[int]:
    coset, j = [], i % n
    while j not in coset:
        coset.append(j)
        j = (2 * j) % n
    return coset


def _minimal_poly(field: GF2m, i: int) -> int:
    """Minimal polynomial of alpha^i as a GF(2)[x] bit-int."""
    poly = [1]  # coefficients in GF(2^m), lowest degree first
    for j in _cyclotomic_coset(i, field.n):
        root = field.pow_alpha(j)
        nxt = [0] * (len(poly) + 1)
        for d, c in enumerate(poly):
            nxt[d + 1] ^= c
            nxt[d] ^= field.mul(c, root)
        poly = nxt
    out = 0
    for d, c in enumerate(poly):
        if c not in (0, 1):
            raise ArithmeticError("minimal polynomial has non-binary coefficient")
        out |= c << d
    return out


def _gf2_mul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        b >>= 1
    return out


def _gf2_mod(a: int, g: int) -> int:
    dg = g.bit_length() - 1
    while a.bit_length() - 1 >= dg:
        a ^= g << (a.bit_length() - 1 - dg)
    return a


def generator_poly(field: GF2m, t: int) -> int:
    """lcm of the minimal polynomials of alpha^1 .. alpha^(2t)."""
    g, seen = 1, set()
    for i in range(1, 2 * t + 1):
        rep = min(_cyclotomic_coset(i, field.n))
        if rep in seen:
            continue
        seen.add(rep)
        g = _gf2_mul(g, _minimal_poly(field, i))
    return g


def designed_t(field: GF2m, k: int) -> int:
    """Largest t whose narrow-sense generator yields dimension k."""
    best = None
    for t in range(1, field.n // 2 + 1):
        kt = field.n - (generator_poly(field, t).bit_length() - 1)
        if kt == k:
            best = t
        elif kt < k:
            break
    if best is None:
        raise ValueError(f"no narrow-sense BCH code of length {field.n} with k={k}")
    return best


@dataclass(frozen=True)
class DecodeFailure:
    """Returned (not raised) when the received word is not decodable."""

    reason: str


@dataclass(frozen=True)
class BchCode:
    name: str
    n: int
    k: int
    t: int  # accepted error weight (operating point)
    m: int
    t_design: int  # designed correction capability of the generator
    generator: int
    field: GF2m = field(repr=False, compare=False)

    @property
    def generator_bits(self) -> np.ndarray:
        return int_to_bits(self.generator, self.n - self.k + 1)

    def encode(self, message) -> np.ndarray:
        return bch_encode(self, message)

    def decode(self, received) -> np.ndarray | DecodeFailure:
        return bch_decode(self, received)

    def syndromes(self, word) -> list[int]:
        return _syndromes(self, _as_bits(word, self.n))


@lru_cache(maxsize=None)
def get_code(name: str) -> BchCode:
    """Build one of the supported codes by config name (``bch127`` ...)."""
    try:
        m, k, t = CODE_PARAMS[name]
    except KeyError:
        raise ValueError(f"unknown ECC config {name!r}; expected one of {sorted(CODE_PARAMS)}") from None
    gf = GF2m(m)
    td = designed_t(gf, k)
    if t > td:
        raise ValueError(f"{name}: accepted weight {t} exceeds designed t={td}")
    g = generator_poly(gf, td)
    return BchCode(name=name, n=gf.n, k=k, t=t, m=m, t_design=td, generator=g, field=gf)


def int_to_bits(value: int, length: int) -> np.ndarray:
    raw = value.to_bytes((length + 7) // 8, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:length].copy()


def bits_to_int(bits: np.ndarray) -> int:
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def _as_bits(bits, length: int) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    if arr.size != length:
        raise ValueError(f"expected {length} bits, got {arr.size}")
    if arr.size and arr.max() > 1:
        raise ValueError("bit arrays must contain only 0 and 1")
    return arr


def bch_encode(code: BchCode, message) -> np.ndarray:
    msg = _as_bits(message, code.k)
    shifted = bits_to_int(msg) << (code.n - code.k)
    return int_to_bits(shifted ^ _gf2_mod(shifted, code.generator), code.n)


def _syndromes(code: BchCode, word: np.ndarray) -> list[int]:
    pos = np.flatnonzero(word)
    if pos.size == 0:
        return [0] * (2 * code.t_design)
    j = np.arange(1, 2 * code.t_design + 1)
    vals = code.field.exp[np.outer(j, pos) % code.n]
    return np.bitwise_xor.reduce(vals, axis=1).tolist()


def _berlekamp_massey(gf: GF2m, synd: list[int]) -> list[int]:
    """Error-locator polynomial (lowest degree first) from 2t syndromes.

    Odd-index discrepancies vanish for binary codes, so those steps only
    advance the shift counter.
    """
    mul, exp, log = gf.mul, gf._exp, gf._log
    C, B = [1], [1]
    L, shift, b = 0, 1, 1
    for step in range(len(synd)):
        if step % 2 == 1:
            shift += 1
            continue
        d = synd[step]
        for i in range(1, L + 1):
            if C[i] and synd[step - i]:
                d ^= exp[log[C[i]] + log[synd[step - i]]]
        if d == 0:
            shift += 1
            continue
        coef = mul(d, gf.inv(b))
        T = C[:]
        need = len(B) + shift
        if len(C) < need:
            C.extend([0] * (need - len(C)))
        lc = log[coef]
        for i, bi in enumerate(B):
            if bi:
                C[i + shift] ^= exp[lc + log[bi]]
        if 2 * L <= step:
            L = step + 1 - L
            B, b, shift = T, d, 1
        else:
            shift += 1
    del C[L + 1 :]
    while len(C) > 1 and C[-1] == 0:
        C.pop()
    return C


def _chien_roots(gf: GF2m, locator: list[int]) -> np.ndarray:
    """Positions i with locator(alpha^-i) == 0."""
    i = np.arange(gf.n)
    acc = np.ones(gf.n, dtype=np.int64)
    for j, c in enumerate(locator[1:], start=1):
        if c:
            acc ^= gf.exp[(gf.log[c] - j * i) % gf.n]
    return np.flatnonzero(acc == 0)


def bch_decode(code: BchCode, received) -> np.ndarray | DecodeFailure:
    """Decode to the k message bits, or return a DecodeFailure.

    Only error patterns of weight <= ``code.t`` are corrected; heavier
    patterns fail or (rarely) miscorrect, so callers must verify.
    """
    word = _as_bits(received, code.n).copy()
    synd = _syndromes(code, word)
    if any(synd):
        locator = _berlekamp_massey(code.field, synd)
        nerr = len(locator) - 1
        if nerr > code.t:
            return DecodeFailure(f"error locator degree {nerr} exceeds t={code.t}")
        roots = _chien_roots(code.field, locator)
        if roots.size != nerr:
            return DecodeFailure(f"found {roots.size} roots for degree-{nerr} locator")
        word[roots] ^= 1
    return word[code.n - code.k :].copy()
