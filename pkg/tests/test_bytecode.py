from __future__ import annotations

import io
import os
import tracemalloc

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memprog.bytecode import (
    ADDRESS_LIMIT, HEADER_SIZE, RECORD_SIZE, SHAPES, AddressUnit, Dialect, DriverId,
    Instruction, MalformedInstructionError, OpCode, ProgramFormatError, ProgramHeader,
    ProgramWriter, TruncatedProgramError, decode_instruction, disassemble, encode_instruction,
    format_instruction, load_program, network_immediate, read_header, read_program,
    read_program_reversed, split_network_immediate, write_program,
)


def vheader(shift=6, **kw):
    return ProgramHeader(Dialect.VIRTUAL, AddressUnit.WIRE, shift, DriverId.BITWIRE, **kw)


def pheader(shift=6, **kw):
    return ProgramHeader(Dialect.PHYSICAL, AddressUnit.WIRE, shift, DriverId.BITWIRE, **kw)


@st.composite
def instructions(draw):
    op = draw(st.sampled_from(list(OpCode)))
    shape = SHAPES[op]
    addr = st.integers(0, ADDRESS_LIMIT - 1)
    out = draw(addr) if shape.has_output else 0
    ins = tuple(draw(addr) for _ in range(shape.n_inputs))
    return Instruction(op, draw(st.integers(0, 0xFFFF)), out, ins,
                       draw(st.integers(-(1 << 63), (1 << 63) - 1)))


def test_intadd_record_layout():
    rec = encode_instruction(Instruction(OpCode.IntAdd, 32, 0, (32, 64)))
    assert len(rec) == RECORD_SIZE == 40
    assert rec[0] == OpCode.IntAdd


@settings(max_examples=1000, deadline=None)
@given(instructions())
def test_encode_decode_round_trip(inst):
    assert decode_instruction(encode_instruction(inst)) == inst


def test_mux_with_two_inputs_is_malformed():
    with pytest.raises(MalformedInstructionError):
        encode_instruction(Instruction(OpCode.Mux, 8, 0, (1, 2)))


@pytest.mark.parametrize("inst", [
    Instruction(OpCode.IntAdd, 1 << 16, 0, (0, 0)),
    Instruction(OpCode.IntAdd, 8, ADDRESS_LIMIT, (0, 0)),
    Instruction(OpCode.Output, 8, 5, (0,)),
    Instruction(OpCode.Input, 8, 0, (), 1 << 63),
])
def test_out_of_range_fields_are_malformed(inst):
    with pytest.raises(MalformedInstructionError):
        encode_instruction(inst)


def test_decode_rejects_short_record_and_unknown_opcode():
    with pytest.raises(MalformedInstructionError):
        decode_instruction(b"\x01" * 39)
    with pytest.raises(MalformedInstructionError):
        decode_instruction(b"\xff" + b"\x00" * 39)


def test_empty_program_is_header_only(tmp_path):
    p = tmp_path / "empty.mpg"
    write_program(p, vheader(), [])
    assert os.path.getsize(p) == HEADER_SIZE
    h, insts = load_program(p)
    assert h.instruction_count == 0 and insts == []


def test_write_read_round_trip(tmp_path):
    p = tmp_path / "p.mpg"
    prog = [Instruction(OpCode.Input, 32, 0, (), 0), Instruction(OpCode.Input, 32, 32, (), 1),
            Instruction(OpCode.IntCompareGe, 32, 64, (0, 32)), Instruction(OpCode.Output, 1, 0, (64,))]
    h = pheader(instruction_count=4, frame_count=2, prefetch_frames=1, storage_frame_count=3)
    write_program(p, h, prog)
    h2, insts = load_program(p)
    assert h2 == h and insts == prog


def test_writes_are_byte_identical(tmp_path):
    prog = [Instruction(OpCode.PublicConstant, 8, i * 8, (), i) for i in range(100)]
    for name in ("a", "b"):
        with ProgramWriter(tmp_path / f"{name}.mpg", vheader()) as w:
            w.extend(prog)
    assert (tmp_path / "a.mpg").read_bytes() == (tmp_path / "b.mpg").read_bytes()


def test_header_count_mismatch_on_write_and_read(tmp_path):
    p = tmp_path / "bad.mpg"
    with pytest.raises(ProgramFormatError):
        write_program(p, vheader(instruction_count=5), [Instruction(OpCode.Halt)] * 4)
    # forge a header that claims 5 records over 4
    raw = bytearray(p.read_bytes())
    raw[:HEADER_SIZE] = vheader(instruction_count=5).pack()
    p.write_bytes(bytes(raw))
    _, it = read_program(p)
    with pytest.raises(TruncatedProgramError):
        list(it)
    with pytest.raises(TruncatedProgramError):
        read_program_reversed(p)


def test_wrong_magic_is_format_error(tmp_path):
    p = tmp_path / "magic.mpg"
    write_program(p, vheader(), [])
    p.write_bytes(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(ProgramFormatError):
        read_header(p)


def test_trailing_bytes_are_rejected(tmp_path):
    p = tmp_path / "trail.mpg"
    write_program(p, vheader(instruction_count=1), [Instruction(OpCode.Halt)])
    p.write_bytes(p.read_bytes() + b"\x00")
    _, it = read_program(p)
    with pytest.raises(ProgramFormatError):
        list(it)


def test_reversed_reader_matches_forward(tmp_path):
    p = tmp_path / "r.mpg"
    prog = [Instruction(OpCode.PublicConstant, 8, i, (), i) for i in range(10_000)]
    with ProgramWriter(p, vheader()) as w:
        w.extend(prog)
    _, rev = read_program_reversed(p)
    got = list(rev)
    assert [i for i, _ in got] == list(range(9_999, -1, -1))
    assert [x for _, x in reversed(got)] == prog


def test_reader_memory_is_independent_of_length(tmp_path):
    p = tmp_path / "big.mpg"
    inst = Instruction(OpCode.BitXor, 1, 3, (1, 2))
    n = 1_000_000
    with ProgramWriter(p, vheader()) as w:
        for _ in range(n):
            w.append(inst)
    assert os.path.getsize(p) == HEADER_SIZE + n * RECORD_SIZE
    tracemalloc.start()
    _, it = read_program(p)
    count = sum(1 for _ in it)
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    assert count == n
    assert peak < 8 * 1024 * 1024  # a bounded chunk, not 40 MB of records


def test_network_immediate_packing():
    imm = network_immediate(3, 4096)
    assert split_network_immediate(imm) == (3, 4096)


def test_disassembly_formats():
    vh = vheader(shift=6)
    line = format_instruction(0, Instruction(OpCode.IntAdd, 32, 64, (0, 32)), vh)
    assert line == "00000000 IADD w32 v1:0 <- v0:0, v0:32"
    ph = pheader(shift=6)
    assert format_instruction(5, Instruction(OpCode.IssueSwapIn, 0, 2, (), 7), ph) == "00000005 ISWI p2 <- s7"
    assert format_instruction(1, Instruction(OpCode.IntAdd, 32, 64, (0, 32)), ph).endswith("p1:0 <- p0:0, p0:32")


def test_disassemble_file(tmp_path):
    p = tmp_path / "d.mpg"
    write_program(p, vheader(instruction_count=2),
                  [Instruction(OpCode.Input, 8, 0, (), 0), Instruction(OpCode.Output, 8, 0, (0,))])
    sink = io.StringIO()
    disassemble(p, sink)
    lines = sink.getvalue().splitlines()
    assert lines[0].startswith("; dialect=virtual")
    assert lines[-2:] == ["00000000 INPUT w8 v0:0 #0", "00000001 OUTPUT w8 <- v0:0"]
