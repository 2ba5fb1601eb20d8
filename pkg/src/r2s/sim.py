"""Simulation and statistics harness for leader selection and PoW timing.

The proof-of-work model: a node doing ``r`` hashes per second against
difficulty ``d`` needs an exponentially distributed time with rate ``r/d``;
with several nodes the earliest finisher wins, so node ``i`` wins with
probability ``r_i / sum(r)``. ``run_pow_race_analytic`` samples that model
directly, ``run_pow_race_real`` measures it by actually hashing.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from r2s import crypto
from r2s.block import ClassicPowHeader, HASH_SPACE, genesis_previous_hash
from r2s.chain import Chain
from r2s.consensus import (
    ConsensusMode,
    ExternalScheduler,
    Identity,
    Trust,
    seal_block_pow,
    verify_block,
)
from r2s.crypto import Digest, encode_fields


@dataclass(frozen=True)
class NodeProfile:
    node_id: str
    hash_rate: float = 1.0

    def __post_init__(self):
        if not self.hash_rate > 0:
            raise ValueError(f"hash_rate of {self.node_id!r} must be positive")


def nodes_from_rates(rates: Sequence[float]) -> list[NodeProfile]:
    return [NodeProfile(f"node-{i}", float(r)) for i, r in enumerate(rates)]


@dataclass
class SimReport:
    mode: str
    node_ids: list[str]
    wins: list[int]
    samples: list[float]
    winners: list[int]
    difficulty: Optional[int] = None
    rates: Optional[list[float]] = None
    ks_statistic: Optional[float] = None
    iterations: Optional[list[int]] = None
    chain: Optional[Chain] = field(default=None, repr=False, compare=False)

    @property
    def total_blocks(self) -> int:
        return len(self.samples)

    @property
    def shares(self) -> list[float]:
        total = sum(self.wins)
        return [w / total for w in self.wins]

    def as_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "total_blocks": self.total_blocks,
            "difficulty": self.difficulty,
            "nodes": [
                {"node_id": nid, "wins": w, "share": s}
                for nid, w, s in zip(self.node_ids, self.wins, self.shares)
            ],
            "ks_statistic": self.ks_statistic,
        }
        if self.rates is not None:
            out["expected_shares"] = expected_win_share(self.rates)
        if self.samples:
            out["mean_T"] = float(np.mean(self.samples))
        if self.iterations is not None:
            out["mean_iterations"] = float(np.mean(self.iterations))
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["block_index", "winner", "T_sample"])
        for i, (w, t) in enumerate(zip(self.winners, self.samples)):
            writer.writerow([i, self.node_ids[w], repr(t)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"mode={self.mode} blocks={self.total_blocks} difficulty={self.difficulty}"]
        expected = expected_win_share(self.rates) if self.rates is not None else [None] * len(self.wins)
        for nid, w, s, e in zip(self.node_ids, self.wins, self.shares, expected):
            exp = "" if e is None else f" expected={e:.4f}"
            lines.append(f"{nid:>12} wins={w:<7d} share={s:.4f}{exp}")
        if self.ks_statistic is not None:
            lines.append(f"KS statistic vs exponential model: {self.ks_statistic:.4f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def model_cdf(t, r: float, d: float):
    """P{T(r) <= t} = 1 - exp(-(r/d) t). Accepts scalars or arrays for ``t``."""
    if not r > 0:
        raise ValueError("hash rate must be positive")
    if not d >= 1:
        raise ValueError("difficulty must be >= 1")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("time must be non-negative")
    out = -np.expm1(-(r / d) * t_arr)
    return float(out) if out.ndim == 0 else out


def expected_win_share(rates: Sequence[float]) -> list[float]:
    if len(rates) == 0:
        raise ValueError("need at least one rate")
    if any(not r > 0 for r in rates):
        raise ValueError("rates must be positive")
    total = math.fsum(rates)
    return [r / total for r in rates]


def ks_against_model(samples, r: float, d: float) -> float:
    return float(stats.kstest(np.asarray(samples, dtype=float), lambda t: model_cdf(t, r, d)).statistic)


# ---------------------------------------------------------------------------
# PoW races
# ---------------------------------------------------------------------------


def run_pow_race_analytic(nodes: Sequence[NodeProfile], d: int, num_blocks: int, seed=None) -> SimReport:
    """Each block: every node draws T_i ~ Exp(r_i/d); the smallest wins."""
    if num_blocks < 1:
        raise ValueError("num_blocks must be >= 1")
    rng = np.random.default_rng(seed)
    rates = np.array([n.hash_rate for n in nodes], dtype=float)
    times = rng.exponential(d / rates, size=(num_blocks, len(nodes)))
    winners = np.argmin(times, axis=1)
    t = times[np.arange(num_blocks), winners]
    wins = np.bincount(winners, minlength=len(nodes))
    return SimReport(
        mode="analytic",
        node_ids=[n.node_id for n in nodes],
        wins=[int(w) for w in wins],
        samples=[float(x) for x in t],
        winners=[int(w) for w in winners],
        difficulty=d,
        rates=[float(r) for r in rates],
        ks_statistic=ks_against_model(t, float(rates.sum()), d),
    )


def mine_nonce(block_number: int, d: int, previous_block_hash: Digest, start_nonce: int = 0):
    """Reference miner over the classic nonce header.

    Returns ``(header, hash, iterations)`` for the first nonce at or after
    ``start_nonce`` whose header hash reaches difficulty ``d``.
    """
    target = HASH_SPACE // d if d > 1 else HASH_SPACE
    prefix = encode_fields([str(block_number).encode(), str(d).encode()])
    suffix = encode_fields([bytes(previous_block_hash)])
    sha = hashlib.sha256
    nonce = start_nonce
    iterations = 0
    while True:
        iterations += 1
        n = str(nonce).encode()
        raw = sha(prefix + len(n).to_bytes(4, "big") + n + suffix).digest()
        if int.from_bytes(raw, "big") + 1 <= target:
            header = ClassicPowHeader(block_number, d, nonce, previous_block_hash)
            return header, Digest(raw), iterations
        nonce += 1


def run_pow_race_real(
    nodes: Sequence[NodeProfile],
    d: int,
    num_blocks: int,
    seed=None,
    lottery: str = "nonce",
) -> SimReport:
    """Race by real hashing; node time is iterations / hash_rate.

    ``lottery="nonce"`` uses the classic nonce miner, ``"certificate"`` the
    key-pair/certificate lottery of :func:`seal_block_pow`. Ties go to the
    node listed first.
    """
    if lottery not in ("nonce", "certificate"):
        raise ValueError(f"unknown lottery {lottery!r}")
    rng = np.random.default_rng(seed)
    node_rngs = rng.spawn(len(nodes))
    prev = genesis_previous_hash()
    winners, samples, iterations = [], [], []
    for number in range(num_blocks):
        best = None
        for i, node in enumerate(nodes):
            if lottery == "nonce":
                start = int(node_rngs[i].integers(0, 2**62))
                _, h, k = mine_nonce(number, d, prev, start)
            else:
                outcome = seal_block_pow(node.node_id, d, number, prev, b"", rng=node_rngs[i])
                h, k = outcome.block.hash(), outcome.iterations
            t = k / node.hash_rate
            if best is None or t < best[0]:
                best = (t, i, k, h)
        t, i, k, prev = best
        winners.append(i)
        samples.append(float(t))
        iterations.append(k)
    wins = np.bincount(winners, minlength=len(nodes))
    total_rate = sum(n.hash_rate for n in nodes)
    return SimReport(
        mode="real" if lottery == "nonce" else "real-certificate",
        node_ids=[n.node_id for n in nodes],
        wins=[int(w) for w in wins],
        samples=samples,
        winners=winners,
        difficulty=d,
        rates=[n.hash_rate for n in nodes],
        ks_statistic=ks_against_model(samples, total_rate, d),
        iterations=iterations,
    )


# ---------------------------------------------------------------------------
# External schedules
# ---------------------------------------------------------------------------


def make_identities(node_ids: Sequence[str], ca_name: str = "ca", seed=None):
    """CA certificate plus one CA-signed identity per node, reproducible under ``seed``."""
    rng = np.random.default_rng(seed)
    ca_keys = crypto.generate_keypair(rng.bytes(crypto.SEED_SIZE))
    ca_cert = crypto.make_self_signed_certificate(ca_keys, ca_name, rng)
    identities = []
    for nid in node_ids:
        keys = crypto.generate_keypair(rng.bytes(crypto.SEED_SIZE))
        cert = crypto.issue_certificate(ca_keys, ca_name, keys.public_key, nid, rng)
        identities.append(Identity(keys, cert))
    return ca_cert, identities


def run_schedule(
    scheduler: ExternalScheduler,
    num_blocks: int,
    nodes: Optional[Sequence[NodeProfile]] = None,
    seed=None,
) -> SimReport:
    """Seal ``num_blocks`` external-mode blocks (genesis included), each by
    the leader the scheduler picks, and append them to a fresh chain."""
    if nodes is None:
        nodes = [NodeProfile(f"node-{i}") for i in range(scheduler.n_nodes)]
    if len(nodes) != scheduler.n_nodes:
        raise ValueError(f"scheduler expects {scheduler.n_nodes} nodes, got {len(nodes)}")
    ca_cert, identities = make_identities([n.node_id for n in nodes], seed=seed)
    modes = [ConsensusMode.external(ident) for ident in identities]
    chain = Chain((), [ca_cert])
    winners, samples = [], []
    for number in range(num_blocks):
        election = scheduler.elect(number)
        chain.seal_and_append(modes[election.leader], f"block {number}".encode())
        winners.append(election.leader)
        samples.append(election.elapsed)
    return SimReport(
        mode="schedule",
        node_ids=[n.node_id for n in nodes],
        wins=[int(w) for w in np.bincount(winners, minlength=len(nodes))],
        samples=samples,
        winners=winners,
        difficulty=0,
        chain=chain,
    )


# ---------------------------------------------------------------------------
# Verification cost
# ---------------------------------------------------------------------------


def verification_cost_probe(block, trust: Optional[Trust] = None) -> dict:
    """Count hashes and signature checks ``verify_block`` spends on a PoW block."""
    if block.header.difficulty < 1:
        raise ValueError("verification_cost_probe expects a proof-of-work block")
    trust = trust if trust is not None else Trust()
    with crypto.count_operations() as counter:
        verdict = verify_block(block, block.header.previous_block_hash, block.block_number, trust)
    result = counter.as_dict()
    result["accepted"] = verdict.accepted
    return result
