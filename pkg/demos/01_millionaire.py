"""
Yao's millionaires' problem as a memory program
================================================

Build a two-party comparison with the DSL, look at the bytecode the
planner produces, and run it on the plaintext bit-wire engine.
"""

import sys
import tempfile
from pathlib import Path

from memprog.bytecode import disassemble
from memprog.drivers import DriverConfig
from memprog.dsl import ProgramOptions
from memprog.planner import plan
from memprog.programs import millionaire
from memprog.runner import run_workers

work = Path(tempfile.mkdtemp())

# one worker, 64 KiB pages of 16-byte wires
opts = ProgramOptions(0, 1, 0, millionaire.driver_id, 12, DriverConfig(), {})
res = plan(millionaire, opts, work / "millionaire.mpg")
print(f"{res.placement.instructions} instructions, {res.frames} frame(s)")

disassemble(res.program, sys.stdout)

# the input file holds both parties' values in program order
for alice, bob in [(5, 3), (3, 5), (7, 7)]:
    out = run_workers([res.program], [[str(alice), str(bob)]])[0]
    print(f"alice={alice} bob={bob} -> alice is at least as rich: {out.output[0]}")
    print(f"  {out.stats.gates} gates")
