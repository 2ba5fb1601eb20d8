"""Append-only chain store, whole-chain verification and attestation reports."""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from r2s import crypto
from r2s.block import Block, BlockFormatError, block_difficulty, genesis_previous_hash
from r2s.consensus import (
    ConsensusMode,
    Reason,
    Trust,
    Verdict,
    seal_block,
    verify_block,
)
from r2s.crypto import Certificate, CryptoError, Digest


class ChainFormatError(ValueError):
    """A chain or manifest file cannot be parsed."""


class BlockRejected(Exception):
    def __init__(self, reason: Reason, index: Optional[int] = None):
        where = f" at index {index}" if index is not None else ""
        super().__init__(f"block rejected: {reason}{where}")
        self.reason = reason
        self.index = index


class Allowlist:
    """Set of allowed certificate fingerprints; hashed, so lookups are O(1)."""

    def __init__(self, fingerprints: Iterable[Digest] = ()):
        self._fingerprints = set(fingerprints)

    @classmethod
    def of(cls, certificates: Iterable[Certificate]) -> "Allowlist":
        return cls(crypto.certificate_fingerprint(c) for c in certificates)

    def __contains__(self, fingerprint: Digest) -> bool:
        return fingerprint in self._fingerprints

    def __len__(self) -> int:
        return len(self._fingerprints)

    def __iter__(self) -> Iterator[Digest]:
        return iter(sorted(self._fingerprints, key=lambda d: d.raw))

    def add(self, fingerprint: Digest) -> None:
        self._fingerprints.add(fingerprint)

    def discard(self, fingerprint: Digest) -> None:
        self._fingerprints.discard(fingerprint)


class Chain:
    """Blocks B0..Bn plus the trust configuration used to verify them.

    Writers are serialized by an internal lock; readers get an immutable
    tuple snapshot that a concurrent append never tears. There is no API to
    update or delete blocks.
    """

    def __init__(
        self,
        blocks: Sequence[Block],
        trust_anchors: Iterable[Certificate] = (),
        allowlist: Optional[Allowlist] = None,
    ):
        self._blocks: tuple[Block, ...] = tuple(blocks)
        self.trust_anchors = tuple(trust_anchors)
        self.allowlist = allowlist
        self._write_lock = threading.Lock()

    @property
    def trust(self) -> Trust:
        return Trust(self.trust_anchors, self.allowlist)

    @property
    def blocks(self) -> tuple[Block, ...]:
        return self._blocks

    def snapshot(self) -> tuple[Block, ...]:
        return self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def __getitem__(self, index: int) -> Block:
        return self._blocks[index]

    def __iter__(self) -> Iterator[Block]:
        return iter(self._blocks)

    @property
    def tip(self) -> Block:
        return self._blocks[-1]

    def next_link(self) -> tuple[int, Digest]:
        """(block number, previous hash) the next block must carry."""
        blocks = self._blocks
        if not blocks:
            return 0, genesis_previous_hash()
        return blocks[-1].block_number + 1, blocks[-1].hash()

    def append(self, block: Block) -> "Chain":
        """Append ``block`` if it verifies against the current tip.

        Raises :class:`BlockRejected` with the verification reason otherwise;
        the chain is left unchanged.
        """
        with self._write_lock:
            number, prev = self.next_link()
            verdict = verify_block(block, prev, number, self.trust)
            if not verdict:
                raise BlockRejected(verdict.reason, len(self._blocks))
            self._blocks = self._blocks + (block,)
        return self

    def seal_and_append(self, mode: ConsensusMode, payload: bytes, **options):
        """Seal the next block under ``mode`` and append it; returns the MiningOutcome."""
        with self._write_lock:
            number, prev = self.next_link()
        outcome = seal_block(mode, number, prev, payload, **options)
        self.append(outcome.block)
        return outcome

    # -- persistence ------------------------------------------------------

    def to_ndjson(self) -> str:
        return "".join(b.to_json() + "\n" for b in self._blocks)

    def manifest(self) -> dict:
        return {
            "trust_anchors": [crypto.b64encode(c.encode()) for c in self.trust_anchors],
            "allowlist": None if self.allowlist is None else [d.hex for d in self.allowlist],
            "scheme_id": crypto.ED25519,
        }

    def save(self, chain_path, manifest_path=None) -> None:
        Path(chain_path).write_text(self.to_ndjson(), encoding="utf-8")
        if manifest_path is not None:
            Path(manifest_path).write_text(json.dumps(self.manifest(), indent=2) + "\n", encoding="utf-8")


def init_chain(
    trust_anchors: Iterable[Certificate],
    allowlist: Optional[Allowlist],
    genesis_payload: bytes,
    genesis_mode: ConsensusMode,
    **seal_options,
) -> Chain:
    """New chain holding only a sealed, verified genesis block.

    Raises :class:`BlockRejected` when the genesis block does not verify,
    e.g. because its certificate is missing from ``allowlist``.
    """
    chain = Chain((), trust_anchors, allowlist)
    chain.seal_and_append(genesis_mode, genesis_payload, **seal_options)
    return chain


def verify_chain(chain: Chain | Sequence[Block], trust: Optional[Trust] = None) -> Verdict:
    """Verify from genesis; reports the first failing index."""
    if trust is None:
        trust = chain.trust
    prev = genesis_previous_hash()
    for index, block in enumerate(chain):
        verdict = verify_block(block, prev, index, trust)
        if not verdict:
            return Verdict(verdict.reason, index)
        prev = block.hash()
    return Verdict()


@dataclass(frozen=True)
class Attestation:
    index: int
    mode: str
    declared_difficulty: int
    achieved_difficulty: int
    subject: str
    issuer: str
    self_signed: bool
    trusted_issuer: Optional[str]
    fingerprint: Digest
    block_hash: Digest
    signature_valid: bool
    certificate: Certificate

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "mode": self.mode,
            "declared_difficulty": str(self.declared_difficulty),
            "achieved_difficulty": str(self.achieved_difficulty),
            "subject": self.subject,
            "issuer": self.issuer,
            "self_signed": self.self_signed,
            "trusted_issuer": self.trusted_issuer,
            "fingerprint": self.fingerprint.hex,
            "block_hash": self.block_hash.hex,
            "signature_valid": self.signature_valid,
            "certificate": crypto.b64encode(self.certificate.encode()),
        }


def attest_report(chain: Chain, index: int) -> Attestation:
    """Read-only summary of the evidence that block ``index`` was agreed on."""
    if not 0 <= index < len(chain):
        raise IndexError(f"block index {index} out of range for chain of length {len(chain)}")
    block = chain[index]
    header = block.header
    cert = header.certificate
    h = header.hash()
    self_signed = crypto.verify_certificate(cert)
    anchor = chain.trust.anchor_for(cert)
    return Attestation(
        index=index,
        mode="pow" if header.difficulty > 0 else "external",
        declared_difficulty=header.difficulty,
        achieved_difficulty=block_difficulty(h),
        subject=cert.subject,
        issuer=cert.issuer,
        self_signed=self_signed,
        trusted_issuer=anchor.subject if anchor is not None else None,
        fingerprint=crypto.certificate_fingerprint(cert),
        block_hash=h,
        signature_valid=crypto.verify(cert.public_key, h.raw, header.signature),
        certificate=cert,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def parse_chain(text: str) -> list[Block]:
    """Parse newline-delimited JSON blocks; every line must end in a newline."""
    if text and not text.endswith("\n"):
        raise ChainFormatError("chain file does not end with a newline")
    blocks = []
    for lineno, line in enumerate(text.split("\n")[:-1], start=1):
        try:
            blocks.append(Block.from_json(line))
        except BlockFormatError as exc:
            raise ChainFormatError(f"line {lineno}: {exc}") from None
    return blocks


def parse_manifest(text: str) -> tuple[list[Certificate], Optional[Allowlist]]:
    try:
        data = json.loads(text)
        if data.get("scheme_id") != crypto.ED25519:
            raise ChainFormatError(f"unsupported scheme {data.get('scheme_id')!r}")
        anchors = [Certificate.decode(crypto.b64decode_strict(s)) for s in data["trust_anchors"]]
        allow = data["allowlist"]
        allowlist = None if allow is None else Allowlist(Digest.from_hex(h) for h in allow)
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError, CryptoError) as exc:
        raise ChainFormatError(f"bad manifest: {exc}") from None
    return anchors, allowlist


def load_chain(chain_path, manifest_path) -> Chain:
    try:
        text = Path(chain_path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ChainFormatError(f"chain file is not UTF-8: {exc}") from None
    blocks = parse_chain(text)
    anchors, allowlist = parse_manifest(Path(manifest_path).read_text(encoding="utf-8"))
    return Chain(blocks, anchors, allowlist)
