"""
Running with a quarter of the memory
====================================

Plan ``rsum`` (a sum of encrypted vectors) for a memory limit of 1/4 of
its footprint and compare virtual time against the unbounded plan and a
demand-paged LRU baseline on the simulated storage device.
"""

import tempfile
from pathlib import Path

from memprog.bench import BenchSettings, run_bench

settings = BenchSettings(workloads=("rsum", "mvmul"), measure_memory=False)
report = run_bench(settings)

for c in report.cells:
    s = c.stats
    print(f"{c.workload:6s} {c.scenario:13s} frames={c.frames:4d}+{c.prefetch_frames:<3d} "
          f"ratio={c.ratio:6.3f} swap_ins={s['swap_ins']:5d} stalls={s['finish_swapin_stalls']:4d} "
          f"correct={c.correct}")

out = Path(tempfile.mkdtemp())
paths = report.write(out)
print("report:", paths["report"])
print("plot with: gnuplot", paths["gnuplot"])
