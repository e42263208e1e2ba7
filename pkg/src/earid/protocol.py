"""Fuzzy commitment and the earbud / verifier message flows.

Wire header (little-endian): magic ``EID1``, type u8, payload length u32.
Authentication messages carry only the commitment C and SHA-256 of the
secret R; features and scans never leave the earbud after enrollment.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import secrets
import struct
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FeatureConfig, KeygenConfig
from .ecc import BchCode, DecodeFailure, get_code
from .features import extract_features
from .keygen import BiometricKey, HelperData, PopulationStats, enroll_from_features, extract_key

logger = logging.getLogger(__name__)

MAGIC = b"EID1"
HEADER = struct.Struct("<4sBI")
HASH_LEN = 32


class MessageType(enum.IntEnum):
    ENROLL_FEATURES = 1
    HELPER_DATA = 2
    AUTH_COMMIT = 3
    AUTH_RESULT = 4


class MalformedMessage(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolMessage:
    type: MessageType
    payload: bytes

    def to_bytes(self) -> bytes:
        return HEADER.pack(MAGIC, int(self.type), len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ProtocolMessage":
        if len(blob) < HEADER.size:
            raise MalformedMessage("truncated header")
        magic, mtype, length = HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise MalformedMessage("bad magic")
        try:
            mtype = MessageType(mtype)
        except ValueError:
            raise MalformedMessage(f"unknown message type {mtype}") from None
        if len(blob) != HEADER.size + length:
            raise MalformedMessage(f"payload length {len(blob) - HEADER.size} != declared {length}")
        return cls(mtype, bytes(blob[HEADER.size :]))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob, self.off = blob, 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise MalformedMessage("truncated payload")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self) -> None:
        if self.off != len(self.blob):
            raise MalformedMessage(f"{len(self.blob) - self.off} trailing bytes")


def _pack_id(user_id: str) -> bytes:
    raw = user_id.encode("utf-8")
    if not 0 < len(raw) < 256:
        raise ValueError("user id must be 1..255 UTF-8 bytes")
    return struct.pack("<B", len(raw)) + raw


def _read_id(r: _Reader) -> str:
    (n,) = r.unpack("<B")
    try:
        return r.take(n).decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedMessage("user id is not UTF-8") from None


def pack_bits(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(blob: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(blob, np.uint8), bitorder="little")[:n].copy()


# payload codecs

def encode_enroll_features(user_id: str, coefficients) -> ProtocolMessage:
    c = np.asarray(coefficients, dtype="<f4").ravel()
    payload = _pack_id(user_id) + struct.pack("<H", c.size) + c.tobytes()
    return ProtocolMessage(MessageType.ENROLL_FEATURES, payload)


def decode_enroll_features(msg: ProtocolMessage) -> tuple[str, np.ndarray]:
    _expect(msg, MessageType.ENROLL_FEATURES)
    r = _Reader(msg.payload)
    uid = _read_id(r)
    (d,) = r.unpack("<H")
    c = np.frombuffer(r.take(4 * d), "<f4").astype(float)
    r.done()
    return uid, c


def encode_helper(helper: HelperData) -> ProtocolMessage:
    return ProtocolMessage(MessageType.HELPER_DATA, helper.to_bytes())


def decode_helper(msg: ProtocolMessage) -> HelperData:
    _expect(msg, MessageType.HELPER_DATA)
    try:
        return HelperData.from_bytes(msg.payload)
    except (ValueError, struct.error) as exc:
        raise MalformedMessage(f"bad helper data: {exc}") from None


@dataclass(frozen=True)
class Commitment:
    c_bits: np.ndarray = field(repr=False)
    secret_hash: bytes

    def __post_init__(self):
        if len(self.secret_hash) != HASH_LEN:
            raise ValueError("secret hash must be 32 bytes")


def encode_auth_commit(user_id: str, ecc_name: str, commitment: Commitment) -> ProtocolMessage:
    name = ecc_name.encode("ascii")
    payload = b"".join([
        _pack_id(user_id),
        struct.pack("<B", len(name)),
        name,
        pack_bits(commitment.c_bits),
        commitment.secret_hash,
    ])
    return ProtocolMessage(MessageType.AUTH_COMMIT, payload)


def decode_auth_commit(msg: ProtocolMessage) -> tuple[str, str, Commitment]:
    _expect(msg, MessageType.AUTH_COMMIT)
    r = _Reader(msg.payload)
    uid = _read_id(r)
    (n_name,) = r.unpack("<B")
    name = r.take(n_name).decode("ascii", errors="replace")
    try:
        code = get_code(name)
    except ValueError as exc:
        raise MalformedMessage(str(exc)) from None
    c = unpack_bits(r.take((code.n + 7) // 8), code.n)
    digest = r.take(HASH_LEN)
    r.done()
    return uid, name, Commitment(c, digest)


def encode_auth_result(accepted: bool) -> ProtocolMessage:
    return ProtocolMessage(MessageType.AUTH_RESULT, bytes([1 if accepted else 0]))


def decode_auth_result(msg: ProtocolMessage) -> bool:
    _expect(msg, MessageType.AUTH_RESULT)
    if msg.payload not in (b"\x00", b"\x01"):
        raise MalformedMessage("auth result must be a single 0/1 byte")
    return msg.payload == b"\x01"


def _expect(msg: ProtocolMessage, mtype: MessageType) -> None:
    if msg.type != mtype:
        raise MalformedMessage(f"expected {mtype.name}, got {msg.type.name}")


# fuzzy commitment

def hash_secret(secret_bits) -> bytes:
    """SHA-256 of R packed LSB-first, zero padded to whole bytes."""
    return hashlib.sha256(pack_bits(secret_bits)).digest()


def _fresh_secret(k: int, rng: np.random.Generator | None) -> np.ndarray:
    if rng is None:
        return unpack_bits(secrets.token_bytes((k + 7) // 8), k)
    return rng.integers(0, 2, k, dtype=np.uint8)


def commit(key: BiometricKey, code: BchCode, rng: np.random.Generator | None = None) -> tuple[Commitment, np.ndarray]:
    """C = Enc(R) xor key with fresh random R; returns (commitment, R).

    Without ``rng`` the secret comes from the operating system's CSPRNG.
    """
    bits = np.asarray(key.bits, dtype=np.uint8)
    if bits.size != code.n:
        raise ValueError(f"key length {bits.size} does not match code length {code.n}")
    secret = _fresh_secret(code.k, rng)
    c = code.encode(secret) ^ bits
    return Commitment(c, hash_secret(secret)), secret


@dataclass(frozen=True)
class EnrolledCredential:
    user_id: str
    key: BiometricKey = field(repr=False)
    ecc: str
    created: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.key.key_length != get_code(self.ecc).n:
            raise ValueError("key length does not match the credential's code")

    def to_json(self) -> str:
        return json.dumps({
            "user_id": self.user_id,
            "ecc": self.ecc,
            "key": pack_bits(self.key.bits).hex(),
            "key_length": self.key.key_length,
            "created": self.created,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnrolledCredential":
        d = json.loads(text)
        bits = unpack_bits(bytes.fromhex(d["key"]), d["key_length"])
        return cls(d["user_id"], BiometricKey(bits), d["ecc"], d.get("created", {}))


def verify(commitment: Commitment, credential: EnrolledCredential) -> bool:
    """Accept iff Dec(C xor K_enroll) succeeds and hashes to the committed value."""
    code = get_code(credential.ecc)
    if commitment.c_bits.size != code.n:
        return False
    r = code.decode(commitment.c_bits ^ credential.key.bits)
    if isinstance(r, DecodeFailure):
        return False
    return secrets.compare_digest(hash_secret(r), commitment.secret_hash)


# credential store

class CredentialStore:
    """One JSON file per user under ``root``; writes are atomic and serialized."""

    _locks: dict[str, threading.Lock] = {}
    _guard = threading.Lock()

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        with self._guard:
            self._lock = self._locks.setdefault(str(self.root.resolve()), threading.Lock())

    def _path(self, user_id: str) -> Path:
        return self.root / (user_id.encode("utf-8").hex() + ".json")

    def put(self, credential: EnrolledCredential) -> None:
        blob = credential.to_json().encode()
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(blob)
                os.replace(tmp, self._path(credential.user_id))
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise

    def get(self, user_id: str) -> EnrolledCredential | None:
        try:
            return EnrolledCredential.from_json(self._path(user_id).read_text())
        except FileNotFoundError:
            return None

    def delete(self, user_id: str) -> None:
        with self._lock:
            self._path(user_id).unlink(missing_ok=True)

    def users(self) -> list[str]:
        return sorted(bytes.fromhex(p.stem).decode("utf-8") for p in self.root.glob("*.json"))


# sessions

@dataclass(frozen=True)
class AuthResult:
    accepted: bool
    reason: str = ""

    def to_message(self) -> ProtocolMessage:
        return encode_auth_result(self.accepted)


def earbud_enroll_messages(user_id: str, scans, feature_cfg: FeatureConfig | None = None) -> list[ProtocolMessage]:
    """Enrollment uplink over the trusted channel.

    The first message carries the K-scan aggregate feature, the following
    ones carry each scan's own feature (needed for the user distribution).
    """
    fcfg = feature_cfg or FeatureConfig()
    scans = list(scans)
    msgs = [encode_enroll_features(user_id, extract_features(scans, fcfg).coefficients)]
    msgs += [encode_enroll_features(user_id, extract_features([s], fcfg).coefficients) for s in scans]
    return msgs


def enrollment_session(messages, stats: PopulationStats, ecc: str, projection_seed: int,
                       store: CredentialStore | None = None, trusted_channel: bool = False,
                       feature_cfg: FeatureConfig | None = None,
                       keygen_cfg: KeygenConfig | None = None) -> tuple[EnrolledCredential, ProtocolMessage]:
    """Verifier side of enrollment: build key and helper, store the credential.

    Raw features cross the channel here, so the caller must assert that the
    channel is trusted.
    """
    if not trusted_channel:
        raise PermissionError("enrollment sends raw features; set trusted_channel=True")
    decoded = [decode_enroll_features(ProtocolMessage.from_bytes(m) if isinstance(m, bytes) else m) for m in messages]
    if len(decoded) < 3:
        raise ValueError("enrollment needs an aggregate plus at least two scans")
    ids = {uid for uid, _ in decoded}
    if len(ids) != 1:
        raise ValueError("enrollment messages name more than one user")
    user_id = ids.pop()
    aggregate = decoded[0][1]
    per_scan = np.vstack([c for _, c in decoded[1:]])
    code = get_code(ecc)
    key, helper = enroll_from_features(aggregate, per_scan, stats, code.n, projection_seed, feature_cfg, keygen_cfg)
    cred = EnrolledCredential(user_id, key, ecc, {"time": time.time(), "n_scans": per_scan.shape[0],
                                                  "n_retained": int(helper.mask.sum())})
    if store is not None:
        store.put(cred)
    return cred, encode_helper(helper)


def earbud_session(scans, helper: HelperData | ProtocolMessage, ecc: str, user_id: str,
                   rng: np.random.Generator | None = None,
                   feature_cfg: FeatureConfig | None = None) -> ProtocolMessage:
    """Earbud side of authentication: extract key, commit, serialize."""
    if isinstance(helper, ProtocolMessage):
        helper = decode_helper(helper)
    code = get_code(ecc)
    key = extract_key(scans, helper, feature_cfg)
    commitment, _ = commit(key, code, rng)
    return encode_auth_commit(user_id, ecc, commitment)


def verifier_session(message, credentials) -> AuthResult:
    """Verifier side of authentication; every failure maps to Reject.

    ``credentials`` is an EnrolledCredential or a CredentialStore.
    """
    try:
        msg = message if isinstance(message, ProtocolMessage) else ProtocolMessage.from_bytes(message)
        uid, ecc, commitment = decode_auth_commit(msg)
    except MalformedMessage as exc:
        return AuthResult(False, f"malformed: {exc}")
    cred = credentials.get(uid) if isinstance(credentials, CredentialStore) else credentials
    if cred is None or cred.user_id != uid:
        return AuthResult(False, "unknown user")
    if cred.ecc != ecc:
        return AuthResult(False, "ecc mismatch")
    return AuthResult(verify(commitment, cred))
