"""
Belady's MIN against LRU and FIFO
=================================

The replacement stage knows the whole future of the program, so it can
evict the page used farthest in the future.  On the textbook access
string MIN needs 7 swap-ins with three frames; LRU needs 10.
"""

import random

from memprog.replacement import brute_force_min, simulate_trace

trace = [1, 2, 3, 4, 1, 2, 5, 1, 2, 3, 4, 5]
for policy in ("min", "lru", "fifo"):
    s = simulate_trace(trace, 3, policy)
    print(f"{policy:5s} swap-ins={s.swap_ins}")
print("exhaustive optimum:", brute_force_min(trace, 3)[0])

# writes make evictions cost a write-back; MIN stays within 2x of the best total
rng = random.Random(0)
worst = 0.0
for _ in range(100):
    t = [(rng.randrange(6), rng.random() < 0.5) for _ in range(rng.randint(4, 20))]
    frames = rng.randint(1, 4)
    s = simulate_trace(t, frames)
    best_in, best_total = brute_force_min(t, frames)
    assert s.swap_ins == best_in
    if best_total:
        worst = max(worst, (s.swap_ins + s.swap_outs) / best_total)
print(f"worst (swap-ins + write-backs) / optimum over 100 random traces: {worst:.2f}")
