"""
One chain, two ways to earn the right to sign
=============================================

External blocks are signed by a CA-certified node picked by some outside
scheduler. Proof-of-work blocks are signed by whoever first draws a
self-signed certificate that makes the block hash small enough. Both share
one header layout, so a chain can switch between them at any block.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from r2s import ConsensusMode, Identity, crypto
from r2s.chain import Allowlist, init_chain, load_chain, verify_chain, attest_report

rng = np.random.default_rng(11)

ca_keys = crypto.generate_keypair(rng.bytes(32))
ca_cert = crypto.make_self_signed_certificate(ca_keys, "root", rng)
node_keys = crypto.generate_keypair(rng.bytes(32))
node = Identity(node_keys, crypto.issue_certificate(ca_keys, "root", node_keys.public_key, "node-1", rng))

# Genesis comes from the certified node.
chain = init_chain([ca_cert], None, b"genesis", ConsensusMode.external(node))

# Then a few proof-of-work blocks at two difficulties, and back again.
for payload, mode in [
    (b"mined at d=16", ConsensusMode.pow(16)),
    (b"mined at d=256", ConsensusMode.pow(256)),
    (b"back to the scheduler", ConsensusMode.external(node)),
]:
    opts = {"rng": rng} if mode.global_difficulty else {}
    outcome = chain.seal_and_append(mode, payload, **opts)
    print(f"block {chain.tip.block_number}: d={mode.global_difficulty:<4} iterations={outcome.iterations}")

print("verdict:", verify_chain(chain))

# What the chain says about its second block.
report = attest_report(chain, 2)
print(f"block 2 was mined with a self-signed key, achieved difficulty {report.achieved_difficulty}")

# Saving and reloading is lossless; every line has the same keys.
with tempfile.TemporaryDirectory() as tmp:
    path, manifest = Path(tmp) / "chain.ndjson", Path(tmp) / "manifest.json"
    chain.save(path, manifest)
    print(path.read_text().splitlines()[1][:120], "...")
    print("reloaded verdict:", verify_chain(load_chain(path, manifest)))

# An allowlist closes the chain to anyone not listed, whatever their mode.
chain.allowlist = Allowlist.of([node.certificate])
print("with allowlist:", verify_chain(chain))
