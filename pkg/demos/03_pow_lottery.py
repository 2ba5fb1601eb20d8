"""
The certificate lottery
=======================

Proof of work here has no nonce. Each attempt draws a fresh key pair and
self-signed certificate, and wins if the resulting block hash reaches the
target difficulty. Each draw wins with probability about 1/d, so the number
of draws is geometric with mean d, just like a classic nonce search.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from r2s import Trust, crypto, seal_block_pow, verify_block
from r2s.block import block_difficulty, genesis_previous_hash
from r2s.sim import mine_nonce

prev = genesis_previous_hash()
d = 32

# A single sealed block, and what difficulty its hash actually reached.
outcome = seal_block_pow("miner", d, 1, prev, b"payload", rng=np.random.default_rng(0))
h = outcome.block.hash()
print(f"hash {h.hex[:16]}... achieved difficulty {block_difficulty(h)} after {outcome.iterations} draws")

# Iteration counts from both miners.
rng = np.random.default_rng(1)
lottery = np.array([seal_block_pow("m", d, 1, prev, b"x", rng=rng).iterations for _ in range(400)])
starts = np.random.default_rng(2).integers(0, 2**62, size=400)
nonce = np.array([mine_nonce(1, d, prev, int(s))[2] for s in starts])
print(f"mean draws: certificate lottery {lottery.mean():.1f}, nonce search {nonce.mean():.1f}, d = {d}")
print(f"two-sample KS statistic {stats.ks_2samp(lottery, nonce).statistic:.3f}")

# Checking a mined block costs the same at any difficulty.
for difficulty in (4, 1024):
    block = seal_block_pow("m", difficulty, 1, prev, b"x", rng=rng).block
    with crypto.count_operations() as ops:
        verify_block(block, prev, 1, Trust())
    print(f"d={difficulty:<5} verification cost {ops.as_dict()}")
