"""
Merging across four workers
===========================

The distributed bitonic merge exchanges halves of the array between
workers with network directives.  Each worker gets its own memory
program; together they produce the same output as a single worker.
"""

import tempfile
from pathlib import Path

from memprog.planner import plan
from memprog.runner import run_workers
from memprog.workloads import WorkloadSpec, build_workload, generate_inputs

work = Path(tempfile.mkdtemp())
n = 64

for W in (1, 4):
    spec = WorkloadSpec("merge", n, worker_count=W)
    data = generate_inputs(spec, seed=3)
    program = build_workload(spec)
    programs = []
    for w in range(W):
        res = plan(program, spec.options(w, page_shift=7), work / f"merge{W}.w{w}.mpg", frames=16,
                   lookahead=200, prefetch_frames=4)
        programs.append(res.program)
    results = run_workers(programs, data.inputs)
    output = [line for r in results for line in r.output]
    sent = sum(r.stats.network_bytes for r in results)
    print(f"W={W}: correct={output == data.expected} network bytes={sent}")
    for w, r in enumerate(results):
        print(f"  worker {w}: {len(r.output)} records, swap_ins={r.stats.swap_ins}")
