"""Hashing, Ed25519 key pairs, simplified certificates and signatures.

Certificates use a small canonical binary layout instead of X.509: every
field is written as a 4-byte big-endian length followed by the raw bytes,
in a fixed order. The same rule is used for block headers.
"""
from __future__ import annotations

import base64
import binascii
import contextlib
import contextvars
import functools
import hashlib
import secrets
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

ED25519 = "ed25519"
SUPPORTED_SCHEMES = (ED25519,)

SEED_SIZE = 32
SERIAL_SIZE = 16

KEY_FILE_HEADER = "R2S-PRIVATE-KEY v1"
CERT_FILE_HEADER = "R2S-CERT v1"


class CryptoError(ValueError):
    """Malformed key material, certificate encoding or envelope."""


# ---------------------------------------------------------------------------
# Operation counters (used to measure verification cost)
# ---------------------------------------------------------------------------


@dataclass
class OpCounter:
    hashes: int = 0
    sig_verifies: int = 0

    def as_dict(self) -> dict:
        return {"hashes": self.hashes, "sig_verifies": self.sig_verifies}


_COUNTER: contextvars.ContextVar[Optional[OpCounter]] = contextvars.ContextVar(
    "r2s_op_counter", default=None
)


@contextlib.contextmanager
def count_operations() -> Iterator[OpCounter]:
    """Count calls to :func:`sha256` and :func:`verify` inside the block."""
    counter = OpCounter()
    token = _COUNTER.set(counter)
    try:
        yield counter
    finally:
        _COUNTER.reset(token)


# ---------------------------------------------------------------------------
# Encoding helpers
# ---------------------------------------------------------------------------


def encode_fields(fields: Sequence[bytes]) -> bytes:
    return b"".join(struct.pack(">I", len(f)) + f for f in fields)


def decode_fields(data: bytes, count: int) -> list[bytes]:
    """Inverse of :func:`encode_fields`; the whole buffer must be consumed."""
    out = []
    pos = 0
    for _ in range(count):
        if pos + 4 > len(data):
            raise CryptoError("truncated length prefix")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise CryptoError("truncated field")
        out.append(data[pos : pos + n])
        pos += n
    if pos != len(data):
        raise CryptoError("trailing bytes after last field")
    return out


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode_strict(text: str) -> bytes:
    """Decode base64, rejecting anything that is not the canonical encoding."""
    try:
        raw = base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise CryptoError(f"invalid base64: {exc}") from None
    if b64encode(raw) != text:
        raise CryptoError("non-canonical base64")
    return raw


# ---------------------------------------------------------------------------
# Digests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Digest:
    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, (bytes, bytearray)) or len(self.raw) != 32:
            raise CryptoError("digest must be exactly 32 bytes")
        object.__setattr__(self, "raw", bytes(self.raw))

    @property
    def hex(self) -> str:
        return self.raw.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        if len(text) != 64 or text != text.lower():
            raise CryptoError("digest hex must be 64 lowercase characters")
        try:
            return cls(bytes.fromhex(text))
        except ValueError:
            raise CryptoError("invalid digest hex") from None

    def __bytes__(self) -> bytes:
        return self.raw

    def __int__(self) -> int:
        return int.from_bytes(self.raw, "big")

    def __repr__(self) -> str:
        return f"Digest({self.hex})"


def sha256(data: bytes) -> Digest:
    """SHA-256 of ``data``."""
    counter = _COUNTER.get()
    if counter is not None:
        counter.hashes += 1
    return Digest(hashlib.sha256(data).digest())


# ---------------------------------------------------------------------------
# Keys and signatures
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=512)
def _private_key(private_key: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(private_key)


@dataclass(frozen=True)
class KeyPair:
    private_key: bytes = field(repr=False)
    public_key: bytes
    scheme_id: str = ED25519


def generate_keypair(seed: Optional[bytes] = None, scheme_id: str = ED25519) -> KeyPair:
    """Create an Ed25519 key pair, deterministically when ``seed`` is given."""
    if scheme_id not in SUPPORTED_SCHEMES:
        raise CryptoError(f"unsupported signature scheme {scheme_id!r}")
    if seed is None:
        seed = secrets.token_bytes(SEED_SIZE)
    elif len(seed) != SEED_SIZE:
        raise CryptoError(f"seed must be {SEED_SIZE} bytes, got {len(seed)}")
    seed = bytes(seed)
    public = _private_key(seed).public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return KeyPair(seed, public, scheme_id)


@dataclass(frozen=True)
class Signature:
    value: bytes
    scheme_id: str = ED25519


def sign(private_key: bytes, message: bytes, scheme_id: str = ED25519) -> Signature:
    if scheme_id not in SUPPORTED_SCHEMES:
        raise CryptoError(f"unsupported signature scheme {scheme_id!r}")
    try:
        key = _private_key(bytes(private_key))
    except ValueError as exc:
        raise CryptoError(f"invalid private key: {exc}") from None
    return Signature(key.sign(bytes(message)), scheme_id)


def verify(public_key: bytes, message: bytes, sig: Signature) -> bool:
    """True iff ``sig`` is a valid signature over ``message``. Never raises."""
    counter = _COUNTER.get()
    if counter is not None:
        counter.sig_verifies += 1
    if sig.scheme_id not in SUPPORTED_SCHEMES:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public_key)).verify(
            bytes(sig.value), bytes(message)
        )
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    subject: str
    issuer: str
    serial: bytes
    public_key: bytes
    scheme_id: str
    issuer_signature: bytes

    def tbs_bytes(self) -> bytes:
        """The signed portion: every field except the issuer signature."""
        return self._tbs

    def encode(self) -> bytes:
        return self._encoded

    # frozen, so the encodings can be computed once per instance
    @functools.cached_property
    def _tbs(self) -> bytes:
        return encode_fields(
            [
                self.subject.encode("utf-8"),
                self.issuer.encode("utf-8"),
                self.serial,
                self.public_key,
                self.scheme_id.encode("utf-8"),
            ]
        )

    @functools.cached_property
    def _encoded(self) -> bytes:
        return self._tbs + encode_fields([self.issuer_signature])

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        parts = decode_fields(data, 6)
        try:
            subject, issuer, scheme = (parts[i].decode("utf-8") for i in (0, 1, 4))
        except UnicodeDecodeError:
            raise CryptoError("certificate text field is not UTF-8") from None
        cert = cls(subject, issuer, parts[2], parts[3], scheme, parts[5])
        if cert.encode() != data:
            raise CryptoError("non-canonical certificate encoding")
        return cert

    @property
    def is_self_issued(self) -> bool:
        return self.subject == self.issuer

    def signature(self) -> Signature:
        return Signature(self.issuer_signature, self.scheme_id)


def _fresh_serial(rng=None) -> bytes:
    if rng is None:
        return secrets.token_bytes(SERIAL_SIZE)
    return rng.bytes(SERIAL_SIZE)


def make_self_signed_certificate(keys: KeyPair, subject: str, rng=None) -> Certificate:
    """Self-signed certificate with a fresh random serial.

    ``rng`` is an optional ``numpy.random.Generator`` for reproducible serials.
    """
    unsigned = Certificate(
        subject, subject, _fresh_serial(rng), keys.public_key, keys.scheme_id, b""
    )
    sig = sign(keys.private_key, unsigned.tbs_bytes(), keys.scheme_id)
    return Certificate(
        subject, subject, unsigned.serial, keys.public_key, keys.scheme_id, sig.value
    )


def issue_certificate(
    ca_keys: KeyPair,
    ca_name: str,
    subject_public_key: bytes,
    subject: str,
    rng=None,
) -> Certificate:
    if subject == ca_name:
        raise CryptoError("subject equal to the CA name is reserved for self-signed certificates")
    unsigned = Certificate(
        subject, ca_name, _fresh_serial(rng), bytes(subject_public_key), ca_keys.scheme_id, b""
    )
    sig = sign(ca_keys.private_key, unsigned.tbs_bytes(), ca_keys.scheme_id)
    return Certificate(
        subject,
        ca_name,
        unsigned.serial,
        unsigned.public_key,
        unsigned.scheme_id,
        sig.value,
    )


def verify_certificate(cert: Certificate, trust: Certificate | bytes | None = None) -> bool:
    """Check the issuer signature of ``cert``.

    ``trust`` may be an issuer certificate, a raw issuer public key, or None
    (meaning the certificate must be validly self-signed).
    """
    if trust is None:
        if not cert.is_self_issued:
            return False
        key = cert.public_key
    elif isinstance(trust, Certificate):
        if cert.issuer != trust.subject:
            return False
        key = trust.public_key
    else:
        key = trust
    return verify(key, cert.tbs_bytes(), cert.signature())


def certificate_fingerprint(cert: Certificate) -> Digest:
    return sha256(cert.encode())


# ---------------------------------------------------------------------------
# On-disk envelopes
# ---------------------------------------------------------------------------


def _envelope(header: str, payload: bytes) -> str:
    return f"{header}\n{b64encode(payload)}\n"


def _open_envelope(header: str, text: str) -> bytes:
    lines = text.split("\n")
    if len(lines) != 3 or lines[2] != "" or lines[0] != header:
        raise CryptoError(f"expected a two-line {header!r} envelope")
    return b64decode_strict(lines[1])


def dump_private_key(keys: KeyPair) -> str:
    return _envelope(KEY_FILE_HEADER, keys.private_key)


def load_private_key(text: str) -> KeyPair:
    return generate_keypair(_open_envelope(KEY_FILE_HEADER, text))


def dump_certificate(cert: Certificate) -> str:
    return _envelope(CERT_FILE_HEADER, cert.encode())


def load_certificate(text: str) -> Certificate:
    return Certificate.decode(_open_envelope(CERT_FILE_HEADER, text))
