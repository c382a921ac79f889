"""Memory programming for oblivious computations.

Oblivious programs (secure computation, homomorphic encryption) access
memory in a pattern fixed before any input is seen.  ``memprog`` exploits
this by running the program once at plan time to record that pattern and
then computing an exact paging schedule: Belady-optimal replacement plus
prefetching of every page well before its use.  The result is a *memory
program* that an interpreter executes with a fixed amount of RAM.
"""

from .bytecode import DriverId, Instruction, OpCode, ProgramHeader, load_program
from .drivers import BitWireDriver, DriverConfig, LeveledBatchDriver
from .dsl import Batch, Integer, Party, ProgramBuilder, ProgramOptions, ShardedArray, mux
from .engine import Engine, ExecStats, TimingModel, execute
from .planner import plan, run_placement
from .storage import FileStorage, SimulatedStorage, VirtualClock

__version__ = "0.1.0"

__all__ = [
    "Batch", "BitWireDriver", "DriverConfig", "DriverId", "Engine", "ExecStats",
    "FileStorage", "Instruction", "Integer", "LeveledBatchDriver", "OpCode", "Party",
    "ProgramBuilder", "ProgramHeader", "ProgramOptions", "ShardedArray",
    "SimulatedStorage", "TimingModel", "VirtualClock", "execute", "load_program",
    "mux", "plan", "run_placement",
]
