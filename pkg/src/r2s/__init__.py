"""Signature-attested blocks whose signer is chosen by an external
schedule (difficulty 0) or by a certificate-lottery proof of work."""

from r2s.block import (
    Block,
    BlockHeader,
    ClassicPowHeader,
    block_difficulty,
    block_hash,
    genesis_previous_hash,
)
from r2s.chain import (
    Allowlist,
    BlockRejected,
    Chain,
    attest_report,
    init_chain,
    load_chain,
    verify_chain,
)
from r2s.consensus import (
    ConsensusMode,
    Identity,
    MiningOutcome,
    RandomLeader,
    Reason,
    RoundRobin,
    SingleNode,
    Trust,
    Verdict,
    seal_block,
    seal_block_external,
    seal_block_pow,
    verify_block,
)
from r2s.crypto import (
    Certificate,
    Digest,
    KeyPair,
    Signature,
    certificate_fingerprint,
    generate_keypair,
    issue_certificate,
    make_self_signed_certificate,
    sha256,
    sign,
    verify,
    verify_certificate,
)

__version__ = "0.1.0"
