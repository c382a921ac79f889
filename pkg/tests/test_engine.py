from __future__ import annotations

import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memprog.bytecode import (
    AddressUnit, Dialect, DriverId, Instruction, OpCode, ProgramHeader, write_program,
)
from memprog.drivers import BitWireDriver, CorruptValueError, LeveledBatchDriver, SizeTable
from memprog.dsl import Integer
from memprog.engine import (
    CorruptProgramError, Engine, IncompatibleInstructionError, InputError,
    MemoryBoundsError, TimingModel, execute,
)
from memprog.programs import millionaire
from memprog.storage import SimulatedStorage, VirtualClock

from conftest import options

SHIFT = 4
MS = 1e-3


def header(frames=2, prefetch=0, driver=DriverId.BITWIRE, dialect=Dialect.PHYSICAL):
    unit = AddressUnit.WIRE if driver == DriverId.BITWIRE else AddressUnit.BYTE
    return ProgramHeader(dialect, unit, SHIFT, driver, frame_count=frames, prefetch_frames=prefetch,
                         storage_frame_count=1)


def run(insts, inputs=(), storage=None, timing=None, hdr=None):
    eng = Engine(hdr or header(), BitWireDriver(), storage, None, timing)
    out = io.StringIO()
    stats = eng.run(insts, inputs, out)
    return out.getvalue().splitlines(), stats


def swap_program(compute_between: int) -> list[Instruction]:
    """Write wire 0, swap frame 0 out and back into frame 1, then reveal it."""
    return [
        Instruction(OpCode.Input, 1, 0, (), 0),
        Instruction(OpCode.IssueSwapOut, 0, 0, (), 0),
        Instruction(OpCode.FinishSwapOut, 0, 0, (), 0),
        Instruction(OpCode.IssueSwapIn, 0, 1, (), 0),
        *[Instruction(OpCode.BitNot, 1, 1, (0,)) for _ in range(compute_between)],
        Instruction(OpCode.FinishSwapIn, 0, 1, (), 0),
        Instruction(OpCode.Output, 1, 0, (1 << SHIFT,)),
    ]


def sim_storage():
    # 2 ms latency, transfer time negligible
    return SimulatedStorage(16 * (1 << SHIFT), latency=2 * MS, bandwidth=1e15, clock=VirtualClock())


@pytest.mark.parametrize("between, stall", [(0, 2 * MS), (1, 1 * MS), (3, 0.0)])
def test_stall_accounting(between, stall):
    timing = TimingModel(gate_time=0.0, instruction_time=1 * MS)
    out, st = run(swap_program(between), ["1"], sim_storage(), timing)
    assert out == ["1"]
    assert st.finish_swapin_stalls == (1 if stall else 0)
    # the synchronous write-back always waits its full 2 ms
    assert st.stall_time == pytest.approx(2 * MS + stall, abs=1e-9)
    assert st.total_virtual_time == pytest.approx(st.compute_time + st.stall_time)
    assert (st.swap_ins, st.swap_outs) == (1, 1)


def test_millionaire(ws):
    assert ws.execute(millionaire, ["5", "3"]) == ["1"]
    assert ws.execute(millionaire, ["3", "5"]) == ["0"]
    assert ws.execute(millionaire, ["7", "7"]) == ["1"]


def test_batch_op_on_bitwire_engine():
    prog = [Instruction(OpCode.BatchAdd, 0, 0, (0, 0))]
    with pytest.raises(IncompatibleInstructionError, match="BatchAdd"):
        run(prog)


def test_driver_must_match_program():
    with pytest.raises(IncompatibleInstructionError):
        Engine(header(driver=DriverId.BATCH), BitWireDriver())
    with pytest.raises(IncompatibleInstructionError):
        Engine(header(), LeveledBatchDriver(dimension=4, sizes=SizeTable(256, 384)))


def test_finish_without_issue():
    prog = [Instruction(OpCode.FinishSwapIn, 0, 1, (), 0)]
    with pytest.raises(CorruptProgramError, match="without a matching issue"):
        run(prog, storage=sim_storage())


def test_transfer_left_in_flight():
    prog = [Instruction(OpCode.Input, 1, 0, (), 0), Instruction(OpCode.IssueSwapOut, 0, 0, (), 0)]
    with pytest.raises(CorruptProgramError, match="in flight"):
        run(prog, ["1"], storage=sim_storage())


def test_swap_without_storage():
    with pytest.raises(CorruptProgramError, match="without storage"):
        run([Instruction(OpCode.IssueSwapIn, 0, 1, (), 0)])


def test_barrier_without_outstanding_io_is_a_no_op():
    out, st = run([Instruction(OpCode.Input, 8, 0, (), 0), Instruction(OpCode.NetworkBarrier, 0),
                   Instruction(OpCode.Output, 8, 0, (0,))], ["200"])
    assert out == ["200"]


def test_memory_bounds():
    with pytest.raises(MemoryBoundsError):
        run([Instruction(OpCode.Input, 8, (2 << SHIFT) - 4, (), 0)], ["1"])


def test_input_errors():
    prog = [Instruction(OpCode.Input, 8, 0, (), 0)]
    with pytest.raises(InputError, match="underrun"):
        run(prog, [])
    with pytest.raises(InputError, match="fit"):
        run(prog, ["256"])
    with pytest.raises(InputError, match="decimal"):
        run(prog, ["x"])


def test_reading_unwritten_memory_is_detected():
    with pytest.raises(CorruptValueError, match="instruction 0"):
        run([Instruction(OpCode.Output, 8, 0, (0,))])


def test_halt_stops_execution():
    prog = [Instruction(OpCode.Input, 8, 0, (), 0), Instruction(OpCode.Output, 8, 0, (0,)),
            Instruction(OpCode.Halt, 0), Instruction(OpCode.Output, 8, 0, (0,))]
    out, _ = run(prog, ["9"])
    assert out == ["9"]


def test_virtual_program_runs_with_identity_mapping(ws):
    res = ws.plan(millionaire, options(), keep_intermediates=True)
    out = io.StringIO()
    st = execute(res.intermediates["virtual"], BitWireDriver(), inputs=["9", "10"], outputs=out)
    assert out.getvalue() == "0\n"
    assert st.gates > 0 and st.swap_ins == 0


def test_gate_counts_drive_compute_time(ws):
    timing = TimingModel(gate_time=1e-6, instruction_time=0.0)
    res = ws.plan(millionaire, options())
    r = ws.run(res.program, ["1", "2"], timing=timing)
    assert r.stats.compute_time == pytest.approx(r.stats.gates * 1e-6)


def arith(opts):
    a = Integer(32).mark_input()
    b = Integer(32).mark_input()
    (a + b).mark_output()
    (a - b).mark_output()
    (a >= b).mark_output()
    a.eq(b).mark_output()
    a.increment().mark_output()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_integer_arithmetic(module_ws, a, b):
    m = 1 << 32
    want = [(a + b) % m, (a - b) % m, int(a >= b), int(a == b), (a + 1) % m]
    assert module_ws.execute(arith, [str(a), str(b)]) == [str(v) for v in want]


def test_compare_examples(ws):
    assert ws.execute(arith, ["5", "3"])[2] == "1"
    assert ws.execute(arith, ["3", "5"])[2] == "0"
