"""Hybrid block header, block hashing and the hash-to-difficulty metric."""
from __future__ import annotations

import functools
import json
import re
from dataclasses import dataclass

from r2s.crypto import (
    Certificate,
    Digest,
    Signature,
    b64decode_strict,
    b64encode,
    encode_fields,
    sha256,
)

HASH_SPACE = 1 << 256

BLOCK_KEYS = (
    "block_number",
    "difficulty",
    "certificate",
    "previous_block_hash",
    "payload_digest",
    "signature",
    "payload",
)

_PAIRS_DECODER = json.JSONDecoder(object_pairs_hook=list)
_DECIMAL = re.compile(r"0|[1-9][0-9]*")


class BlockFormatError(ValueError):
    """A serialized block does not match the wire format exactly."""


def genesis_previous_hash() -> Digest:
    return Digest(bytes(32))


def block_difficulty(h: Digest | bytes) -> int:
    """floor(2**256 / (int(h) + 1)), reading the hash big-endian.

    Under this metric a uniformly random hash reaches difficulty ``d`` with
    probability ~1/d, so the expected number of draws is ~d.
    """
    return HASH_SPACE // (int.from_bytes(bytes(h), "big") + 1)


@functools.lru_cache(maxsize=64)
def _target(d: int) -> int:
    return HASH_SPACE // d


def meets_difficulty(h: Digest | bytes, d: int) -> bool:
    """Same as ``block_difficulty(h) >= d`` without the big division."""
    if d <= 1:
        return True
    return int.from_bytes(bytes(h), "big") + 1 <= _target(d)


def _int_bytes(n: int) -> bytes:
    return str(n).encode("ascii")


def block_hash(
    block_number: int,
    difficulty: int,
    certificate: Certificate,
    previous_block_hash: Digest,
    payload_digest: Digest,
) -> Digest:
    """SHA-256 over the canonical encoding of the five signed header fields."""
    return sha256(
        header_bytes(block_number, difficulty, certificate, previous_block_hash, payload_digest)
    )


def header_bytes(block_number, difficulty, certificate, previous_block_hash, payload_digest) -> bytes:
    return encode_fields(
        [
            _int_bytes(block_number),
            _int_bytes(difficulty),
            certificate.encode(),
            bytes(previous_block_hash),
            bytes(payload_digest),
        ]
    )


@dataclass(frozen=True)
class BlockHeader:
    block_number: int
    difficulty: int
    certificate: Certificate
    previous_block_hash: Digest
    payload_digest: Digest
    signature: Signature

    def hash(self) -> Digest:
        return block_hash(
            self.block_number,
            self.difficulty,
            self.certificate,
            self.previous_block_hash,
            self.payload_digest,
        )


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    payload: bytes

    @property
    def block_number(self) -> int:
        return self.header.block_number

    def hash(self) -> Digest:
        return self.header.hash()

    def to_json(self) -> str:
        """One-line JSON in the fixed key order; numbers as decimal strings."""
        h = self.header
        record = {
            "block_number": str(h.block_number),
            "difficulty": str(h.difficulty),
            "certificate": b64encode(h.certificate.encode()),
            "previous_block_hash": h.previous_block_hash.hex,
            "payload_digest": h.payload_digest.hex,
            "signature": b64encode(h.signature.value),
            "payload": b64encode(self.payload),
        }
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Block":
        """Strict inverse of :meth:`to_json`.

        Anything that would not re-serialize to the same text is rejected, so
        no two distinct lines parse to the same block.
        """
        if cls is Block:
            return _parse_line(line)
        return cls._parse(line)

    @classmethod
    def _parse(cls, line: str) -> "Block":
        try:
            pairs = _PAIRS_DECODER.decode(line)
        except (json.JSONDecodeError, RecursionError) as exc:
            raise BlockFormatError(f"invalid JSON: {exc}") from None
        if not isinstance(pairs, list) or tuple(k for k, _ in pairs) != BLOCK_KEYS:
            raise BlockFormatError("block keys missing, extra or out of order")
        rec = dict(pairs)
        if not all(isinstance(v, str) for v in rec.values()):
            raise BlockFormatError("all block values must be strings")
        for key in ("block_number", "difficulty"):
            if not _DECIMAL.fullmatch(rec[key]):
                raise BlockFormatError(f"{key} is not a canonical decimal")
        try:
            cert = Certificate.decode(b64decode_strict(rec["certificate"]))
            block = cls(
                BlockHeader(
                    block_number=int(rec["block_number"]),
                    difficulty=int(rec["difficulty"]),
                    certificate=cert,
                    previous_block_hash=Digest.from_hex(rec["previous_block_hash"]),
                    payload_digest=Digest.from_hex(rec["payload_digest"]),
                    signature=Signature(b64decode_strict(rec["signature"]), cert.scheme_id),
                ),
                b64decode_strict(rec["payload"]),
            )
        except ValueError as exc:
            raise BlockFormatError(str(exc)) from None
        # every value was checked to round-trip above, so re-dumping the
        # string record is enough to catch whitespace and escape variants
        if json.dumps(rec, separators=(",", ":")) != line:
            raise BlockFormatError("block line is not in canonical form")
        return block


# Blocks are immutable, so re-reading a chain file only pays for new lines.
# Failures raise and are never cached.
@functools.lru_cache(maxsize=4096)
def _parse_line(line: str) -> Block:
    return Block._parse(line)


@dataclass(frozen=True)
class ClassicPowHeader:
    """Nonce-based header used only by the reference miner in the simulator."""

    block_number: int
    difficulty: int
    nonce: int
    previous_block_hash: Digest

    def encode(self) -> bytes:
        return encode_fields(
            [
                _int_bytes(self.block_number),
                _int_bytes(self.difficulty),
                _int_bytes(self.nonce),
                bytes(self.previous_block_hash),
            ]
        )

    def hash(self) -> Digest:
        return sha256(self.encode())

    def to_json(self) -> str:
        return json.dumps(
            {
                "block_number": self.block_number,
                "difficulty": self.difficulty,
                "nonce": self.nonce,
                "previous_block_hash": self.previous_block_hash.hex,
            },
            separators=(",", ":"),
        )
