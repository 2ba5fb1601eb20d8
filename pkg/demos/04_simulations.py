"""
Races and schedules
===================

With hash rates r_i, node i finds a block after an exponential time with rate
r_i / d, so it wins a fraction r_i / sum(r) of blocks. External schedulers
pick the leader some other way.
"""

from __future__ import annotations

from r2s.consensus import RandomLeader, RoundRobin
from r2s.sim import (
    expected_win_share,
    nodes_from_rates,
    run_pow_race_analytic,
    run_pow_race_real,
    run_schedule,
)

rates = [3, 1, 1]
nodes = nodes_from_rates(rates)

# Analytic race: draw exponential times directly.
analytic = run_pow_race_analytic(nodes, 256, 20_000, seed=1)
print("expected shares", [round(s, 3) for s in expected_win_share(rates)])
print("analytic shares", [round(s, 3) for s in analytic.shares], f"KS={analytic.ks_statistic:.3f}")

# Real race: actual hashing, time measured as draws / hash rate.
real = run_pow_race_real(nodes, 64, 300, seed=1)
print("real shares    ", [round(s, 3) for s in real.shares], f"KS={real.ks_statistic:.3f}")

# External schedules seal real blocks; round robin is exact.
rr = run_schedule(RoundRobin(4), 40, seed=1)
print("round robin wins", rr.wins, "chain length", len(rr.chain))

# Randomized timeouts give each node roughly 1/n of the terms.
rl = run_schedule(RandomLeader(4, seed=1), 400, seed=1)
print("random leader wins", rl.wins)
print(rl.to_text())
