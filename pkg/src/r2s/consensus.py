"""Block sealing, block verification and leader schedulers.

Sealing has two branches selected by the global difficulty ``d``:

* ``d == 0``: consensus was reached elsewhere; the block carries a CA-signed
  certificate and is signed with the matching private key.
* ``d > 0``: a fresh key pair and self-signed certificate are drawn until the
  block hash reaches difficulty ``d``; the winning key then signs the hash.
"""
from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass
from typing import Collection, Iterable, Optional, Sequence

import numpy as np

from r2s import crypto
from r2s.block import Block, BlockHeader, block_hash, meets_difficulty
from r2s.crypto import Certificate, Digest, KeyPair


class ConsensusError(ValueError):
    """Invalid sealing request (wrong identity for the mode, bad difficulty)."""


class IterationCapExceeded(RuntimeError):
    def __init__(self, cap: int):
        super().__init__(f"no winning certificate within {cap} iterations")
        self.cap = cap


@dataclass(frozen=True)
class Identity:
    """A node's CA-signed certificate plus the key pair it certifies."""

    keys: KeyPair
    certificate: Certificate


@dataclass(frozen=True)
class ConsensusMode:
    global_difficulty: int
    external_identity: Optional[Identity] = None

    def __post_init__(self):
        if self.global_difficulty < 0:
            raise ConsensusError("difficulty must be non-negative")
        if self.global_difficulty == 0 and self.external_identity is None:
            raise ConsensusError("difficulty 0 (external consensus) needs a CA-signed identity")
        if self.global_difficulty > 0 and self.external_identity is not None:
            raise ConsensusError("proof-of-work mode takes no external identity")

    @classmethod
    def external(cls, identity: Identity) -> "ConsensusMode":
        return cls(0, identity)

    @classmethod
    def pow(cls, difficulty: int) -> "ConsensusMode":
        return cls(difficulty)


@dataclass(frozen=True)
class MiningOutcome:
    block: Block
    iterations: int
    elapsed: float


# ---------------------------------------------------------------------------
# Sealing
# ---------------------------------------------------------------------------


def _signed_block(keys, cert, block_number, difficulty, previous_block_hash, payload, payload_digest, h):
    header = BlockHeader(
        block_number=block_number,
        difficulty=difficulty,
        certificate=cert,
        previous_block_hash=previous_block_hash,
        payload_digest=payload_digest,
        signature=crypto.sign(keys.private_key, h.raw, keys.scheme_id),
    )
    return Block(header, bytes(payload))


def seal_block_external(
    identity: Identity,
    block_number: int,
    previous_block_hash: Digest,
    payload: bytes,
) -> Block:
    """Seal a block for a node that already won consensus by other means."""
    cert = identity.certificate
    if cert.is_self_issued:
        raise ConsensusError("external mode requires a CA-signed certificate, got a self-signed one")
    if cert.public_key != identity.keys.public_key or cert.scheme_id != identity.keys.scheme_id:
        raise ConsensusError("certificate does not match the identity's key pair")
    payload_digest = crypto.sha256(payload)
    h = block_hash(block_number, 0, cert, previous_block_hash, payload_digest)
    return _signed_block(identity.keys, cert, block_number, 0, previous_block_hash, payload, payload_digest, h)


def _lottery(subject, d, block_number, previous_block_hash, payload_digest, rng, cap, stop, counter, lock):
    # ``counter`` is a one-element list shared with sibling workers.
    while not stop.is_set():
        with lock:
            if cap is not None and counter[0] >= cap:
                return None
            counter[0] += 1
        seed = rng.bytes(crypto.SEED_SIZE) if rng is not None else None
        keys = crypto.generate_keypair(seed)
        cert = crypto.make_self_signed_certificate(keys, subject, rng)
        h = block_hash(block_number, d, cert, previous_block_hash, payload_digest)
        if meets_difficulty(h, d):
            return keys, cert, h
    return None


def seal_block_pow(
    subject: str,
    global_difficulty: int,
    block_number: int,
    previous_block_hash: Digest,
    payload: bytes,
    iteration_cap: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    workers: int = 1,
) -> MiningOutcome:
    """Certificate-lottery proof of work.

    Each pass draws a new key pair and self-signed certificate, hashes the
    header and stops once the hash reaches ``global_difficulty``. With one
    worker and a seeded ``rng`` the result is reproducible. With several
    workers each draws from its own child generator and the first winner
    stops the rest; ``iterations`` then counts passes across all workers.
    """
    if global_difficulty < 1:
        raise ConsensusError("proof-of-work difficulty must be >= 1")
    payload_digest = crypto.sha256(payload)
    start = time.perf_counter()
    counter = [0]
    stop = threading.Event()
    counter_lock = threading.Lock()
    args = (subject, global_difficulty, block_number, previous_block_hash, payload_digest)

    if workers <= 1:
        won = _lottery(*args, rng, iteration_cap, stop, counter, counter_lock)
    else:
        rngs = rng.spawn(workers) if rng is not None else [None] * workers
        results: list = []
        lock = threading.Lock()

        def run(worker_rng):
            res = _lottery(*args, worker_rng, iteration_cap, stop, counter, counter_lock)
            if res is not None:
                with lock:
                    results.append(res)
                stop.set()

        threads = [threading.Thread(target=run, args=(r,)) for r in rngs]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        won = results[0] if results else None

    if won is None:
        raise IterationCapExceeded(iteration_cap)
    keys, cert, h = won
    block = _signed_block(
        keys, cert, block_number, global_difficulty, previous_block_hash, payload, payload_digest, h
    )
    return MiningOutcome(block, counter[0], time.perf_counter() - start)


def seal_block(
    mode: ConsensusMode,
    block_number: int,
    previous_block_hash: Digest,
    payload: bytes,
    subject: str = "miner",
    **pow_options,
) -> MiningOutcome:
    """Dispatch to the branch selected by ``mode``."""
    if mode.global_difficulty == 0:
        start = time.perf_counter()
        block = seal_block_external(mode.external_identity, block_number, previous_block_hash, payload)
        return MiningOutcome(block, 1, time.perf_counter() - start)
    return seal_block_pow(
        subject, mode.global_difficulty, block_number, previous_block_hash, payload, **pow_options
    )


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


class Reason(str, enum.Enum):
    BAD_LINK = "bad-link"
    BAD_NUMBER = "bad-number"
    BAD_PAYLOAD = "bad-payload"
    BAD_SIGNATURE = "bad-signature"
    BAD_PROOF = "bad-proof"
    UNTRUSTED_CERTIFICATE = "untrusted-certificate"
    UNKNOWN_CERTIFICATE = "unknown-certificate"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Verdict:
    reason: Optional[Reason] = None
    index: Optional[int] = None

    @property
    def accepted(self) -> bool:
        return self.reason is None

    def __bool__(self) -> bool:
        return self.accepted

    def __str__(self) -> str:
        if self.accepted:
            return "accept"
        where = f" at index {self.index}" if self.index is not None else ""
        return f"reject({self.reason}){where}"


ACCEPT = Verdict()


@dataclass(frozen=True)
class Trust:
    """Verification context: CA trust anchors plus an optional allowlist.

    ``allowlist`` is any container of certificate fingerprints supporting
    ``in``; None disables the check.
    """

    anchors: tuple = ()
    allowlist: Optional[Collection[Digest]] = None

    def __init__(self, anchors: Iterable[Certificate] = (), allowlist=None):
        object.__setattr__(self, "anchors", tuple(anchors))
        object.__setattr__(self, "allowlist", allowlist)

    def anchor_for(self, cert: Certificate) -> Optional[Certificate]:
        if cert.is_self_issued:
            return None
        for anchor in self.anchors:
            if anchor.subject == cert.issuer and crypto.verify_certificate(cert, anchor):
                return anchor
        return None


def verify_block(
    block: Block,
    expected_previous_hash: Digest,
    expected_number: int,
    trust: Trust,
) -> Verdict:
    """Accept or reject ``block`` as the successor of a known tip.

    A proof-of-work block costs two hashes (payload and header) and two
    signature checks (self-signature and block signature); there is no
    lottery work on this side. An active allowlist adds one fingerprint hash.
    """
    header = block.header
    if header.previous_block_hash != expected_previous_hash:
        return Verdict(Reason.BAD_LINK)
    if header.block_number != expected_number:
        return Verdict(Reason.BAD_NUMBER)
    cert = header.certificate
    if trust.allowlist is not None and crypto.certificate_fingerprint(cert) not in trust.allowlist:
        return Verdict(Reason.UNKNOWN_CERTIFICATE)
    if crypto.sha256(block.payload) != header.payload_digest:
        return Verdict(Reason.BAD_PAYLOAD)
    h = header.hash()
    if not crypto.verify(cert.public_key, h.raw, header.signature):
        return Verdict(Reason.BAD_SIGNATURE)
    if header.difficulty > 0:
        if not crypto.verify_certificate(cert):
            return Verdict(Reason.UNTRUSTED_CERTIFICATE)
        if not meets_difficulty(h, header.difficulty):
            return Verdict(Reason.BAD_PROOF)
    elif trust.anchor_for(cert) is None:
        return Verdict(Reason.UNTRUSTED_CERTIFICATE)
    return ACCEPT


# ---------------------------------------------------------------------------
# External leader schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Election:
    leader: int
    elapsed: float = 0.0


class ExternalScheduler:
    """Chooses which node index may seal a given block number."""

    n_nodes: int = 1

    def elect(self, block_number: int) -> Election:
        raise NotImplementedError

    def next_leader(self, block_number: int) -> int:
        return self.elect(block_number).leader


class SingleNode(ExternalScheduler):
    """One node: it always leads."""

    n_nodes = 1

    def elect(self, block_number: int) -> Election:
        return Election(0)


class RoundRobin(ExternalScheduler):
    def __init__(self, n: int):
        if n < 1:
            raise ConsensusError("round robin needs at least one node")
        self.n_nodes = n

    def elect(self, block_number: int) -> Election:
        return Election(block_number % self.n_nodes)


class RandomLeader(ExternalScheduler):
    """Toy election: each node waits a uniform election timeout plus an
    exponential network delay; the earliest arrival leads.

    Defaults are the usual RAFT magnitudes (150-300 ms timeout, 10 ms mean
    delay) and are configuration, not measured values.
    """

    def __init__(
        self,
        n: int,
        election_timeout: Sequence[float] = (0.150, 0.300),
        network_delay_mean: float = 0.010,
        seed: Optional[int] = None,
    ):
        if n < 1:
            raise ConsensusError("random leader needs at least one node")
        lo, hi = election_timeout
        if not 0 <= lo < hi or network_delay_mean < 0:
            raise ConsensusError("invalid election timing parameters")
        self.n_nodes = n
        self.election_timeout = (lo, hi)
        self.network_delay_mean = network_delay_mean
        self._rng = np.random.default_rng(seed)

    def elect(self, block_number: int) -> Election:
        lo, hi = self.election_timeout
        arrival = self._rng.uniform(lo, hi, self.n_nodes)
        if self.network_delay_mean > 0:
            arrival = arrival + self._rng.exponential(self.network_delay_mean, self.n_nodes)
        leader = int(np.argmin(arrival))
        return Election(leader, float(arrival[leader]))
