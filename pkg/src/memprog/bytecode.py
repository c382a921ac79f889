"""Bytecode dialects, the binary program file format, and a disassembler.

A program file is a fixed-size header followed by ``instruction_count``
fixed-width 40-byte records.  Virtual programs reference MAGE-virtual
addresses produced by placement; physical programs ("memory programs")
reference indices into the interpreter's memory array and may contain
swap, prefetch-copy and network directives.

Record layout (little-endian)::

    0   u8    opcode tag
    1   u8    flags (reserved, zero)
    2   u16   width
    4   7B    output address / frame number
    11  7B    input 0
    18  7B    input 1
    25  7B    input 2
    32  i64   immediate
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass
from typing import IO, BinaryIO, Iterable, Iterator, NamedTuple

MAGIC = b"MPG1"
VERSION = 1
ADDRESS_BITS = 56
ADDRESS_LIMIT = 1 << ADDRESS_BITS
RECORD_SIZE = 40

_RECORD = struct.Struct("<BBH" + "IHB" * 4 + "q")
_HEADER = struct.Struct("<4sHBBBB" + "QQQQ" + "16x")
HEADER_SIZE = _HEADER.size
assert _RECORD.size == RECORD_SIZE

_CHUNK_RECORDS = 4096


class BytecodeError(Exception):
    """Base class for bytecode problems."""


class MalformedInstructionError(BytecodeError):
    pass


class ProgramFormatError(BytecodeError):
    pass


class TruncatedProgramError(ProgramFormatError):
    pass


class OpCode(enum.IntEnum):
    Input = 1
    Output = 2
    PublicConstant = 3
    IntAdd = 4
    IntSub = 5
    IntIncrement = 6
    BitAnd = 7
    BitXor = 8
    BitOr = 9
    BitNot = 10
    ShiftLeftConst = 11
    ShiftRightConst = 12
    IntCompareGe = 13
    IntCompareEq = 14
    Mux = 15
    Copy = 16
    BatchAdd = 17
    BatchMulNoRelin = 18
    BatchRelinRescale = 19
    BatchAddPlain = 20
    BatchMulPlain = 21
    NetworkPostSend = 22
    NetworkPostReceive = 23
    NetworkBarrier = 24
    IssueSwapIn = 25
    FinishSwapIn = 26
    IssueSwapOut = 27
    FinishSwapOut = 28
    CopyFromPrefetch = 29
    CopyToPrefetch = 30
    PrintStats = 31
    Halt = 32


class Dialect(enum.IntEnum):
    VIRTUAL = 0
    PHYSICAL = 1


class AddressUnit(enum.IntEnum):
    WIRE = 0
    BYTE = 1


class DriverId(enum.IntEnum):
    BITWIRE = 1
    BATCH = 2


class _Shape(NamedTuple):
    mnemonic: str
    has_output: bool
    n_inputs: int
    # operands are frame numbers rather than addresses
    frame_operands: bool = False


SHAPES: dict[OpCode, _Shape] = {
    OpCode.Input: _Shape("INPUT", True, 0),
    OpCode.Output: _Shape("OUTPUT", False, 1),
    OpCode.PublicConstant: _Shape("CONST", True, 0),
    OpCode.IntAdd: _Shape("IADD", True, 2),
    OpCode.IntSub: _Shape("ISUB", True, 2),
    OpCode.IntIncrement: _Shape("IINC", True, 1),
    OpCode.BitAnd: _Shape("AND", True, 2),
    OpCode.BitXor: _Shape("XOR", True, 2),
    OpCode.BitOr: _Shape("OR", True, 2),
    OpCode.BitNot: _Shape("NOT", True, 1),
    OpCode.ShiftLeftConst: _Shape("SHL", True, 1),
    OpCode.ShiftRightConst: _Shape("SHR", True, 1),
    OpCode.IntCompareGe: _Shape("IGE", True, 2),
    OpCode.IntCompareEq: _Shape("IEQ", True, 2),
    OpCode.Mux: _Shape("MUX", True, 3),
    OpCode.Copy: _Shape("COPY", True, 1),
    OpCode.BatchAdd: _Shape("BADD", True, 2),
    OpCode.BatchMulNoRelin: _Shape("BMUL", True, 2),
    OpCode.BatchRelinRescale: _Shape("BRELIN", True, 1),
    OpCode.BatchAddPlain: _Shape("BADDP", True, 1),
    OpCode.BatchMulPlain: _Shape("BMULP", True, 1),
    OpCode.NetworkPostSend: _Shape("NSEND", False, 1),
    OpCode.NetworkPostReceive: _Shape("NRECV", True, 0),
    OpCode.NetworkBarrier: _Shape("NBAR", False, 0),
    OpCode.IssueSwapIn: _Shape("ISWI", True, 0, True),
    OpCode.FinishSwapIn: _Shape("FSWI", True, 0, True),
    OpCode.IssueSwapOut: _Shape("ISWO", True, 0, True),
    OpCode.FinishSwapOut: _Shape("FSWO", True, 0, True),
    OpCode.CopyFromPrefetch: _Shape("CPFP", True, 1, True),
    OpCode.CopyToPrefetch: _Shape("CPTP", True, 1, True),
    OpCode.PrintStats: _Shape("STATS", False, 0),
    OpCode.Halt: _Shape("HALT", False, 0),
}

DIRECTIVES = frozenset({
    OpCode.NetworkPostSend, OpCode.NetworkPostReceive, OpCode.NetworkBarrier,
    OpCode.IssueSwapIn, OpCode.FinishSwapIn, OpCode.IssueSwapOut,
    OpCode.FinishSwapOut, OpCode.CopyFromPrefetch, OpCode.CopyToPrefetch,
    OpCode.PrintStats, OpCode.Halt,
})
SWAP_DIRECTIVES = frozenset({
    OpCode.IssueSwapIn, OpCode.FinishSwapIn, OpCode.IssueSwapOut,
    OpCode.FinishSwapOut, OpCode.CopyFromPrefetch, OpCode.CopyToPrefetch,
})
NETWORK_OPS = frozenset({OpCode.NetworkPostSend, OpCode.NetworkPostReceive})


def is_directive(op: OpCode) -> bool:
    return op in DIRECTIVES


class Instruction(NamedTuple):
    opcode: OpCode
    width: int = 1
    output: int = 0
    inputs: tuple[int, ...] = ()
    immediate: int = 0


def network_immediate(peer: int, length: int) -> int:
    """Pack a peer worker id and a length in address units."""
    return (length << 16) | peer


def split_network_immediate(imm: int) -> tuple[int, int]:
    return imm & 0xFFFF, imm >> 16


def memory_operands(inst: Instruction) -> list[tuple[int, bool]]:
    """(address, is_write) pairs a protocol or network instruction touches.

    Swap and copy directives operate on frames and are not included.
    """
    shape = SHAPES[inst.opcode]
    if shape.frame_operands:
        return []
    ops = []
    if shape.has_output:
        ops.append((inst.output, True))
    for a in inst.inputs:
        ops.append((a, False))
    return ops


def validate(inst: Instruction) -> None:
    try:
        shape = SHAPES[OpCode(inst.opcode)]
    except ValueError:
        raise MalformedInstructionError(f"unknown opcode {inst.opcode!r}") from None
    if len(inst.inputs) != shape.n_inputs:
        raise MalformedInstructionError(
            f"{OpCode(inst.opcode).name} takes {shape.n_inputs} inputs, got {len(inst.inputs)}"
        )
    if not 0 <= inst.width < (1 << 16):
        raise MalformedInstructionError(f"width {inst.width} out of range")
    for a in (inst.output, *inst.inputs):
        if not 0 <= a < ADDRESS_LIMIT:
            raise MalformedInstructionError(f"address {a:#x} exceeds 56 bits")
    if not shape.has_output and inst.output != 0:
        raise MalformedInstructionError(f"{OpCode(inst.opcode).name} has no output operand")
    if not -(1 << 63) <= inst.immediate < (1 << 63):
        raise MalformedInstructionError("immediate does not fit in 64 bits")


def _split(a: int) -> tuple[int, int, int]:
    return a & 0xFFFFFFFF, (a >> 32) & 0xFFFF, a >> 48


def encode_instruction(inst: Instruction) -> bytes:
    validate(inst)
    ins = list(inst.inputs) + [0] * (3 - len(inst.inputs))
    fields = [int(inst.opcode), 0, inst.width]
    for a in (inst.output, *ins):
        fields.extend(_split(a))
    fields.append(inst.immediate)
    return _RECORD.pack(*fields)


def _from_fields(f: tuple) -> Instruction:
    op = OpCode(f[0])
    n = SHAPES[op].n_inputs
    out = f[3] | (f[4] << 32) | (f[5] << 48)
    ins = (
        f[6] | (f[7] << 32) | (f[8] << 48),
        f[9] | (f[10] << 32) | (f[11] << 48),
        f[12] | (f[13] << 32) | (f[14] << 48),
    )
    return Instruction(op, f[2], out, ins[:n], f[15])


def decode_instruction(record: bytes) -> Instruction:
    if len(record) != RECORD_SIZE:
        raise MalformedInstructionError(f"record must be {RECORD_SIZE} bytes, got {len(record)}")
    try:
        return _from_fields(_RECORD.unpack(record))
    except ValueError as exc:
        raise MalformedInstructionError(str(exc)) from None


@dataclass
class ProgramHeader:
    dialect: Dialect
    address_unit: AddressUnit
    page_shift: int
    driver_id: DriverId
    instruction_count: int = 0
    frame_count: int = 0
    prefetch_frames: int = 0
    storage_frame_count: int = 0
    version: int = VERSION

    @property
    def page_size(self) -> int:
        return 1 << self.page_shift

    @property
    def total_frames(self) -> int:
        return self.frame_count + self.prefetch_frames

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC, self.version, int(self.dialect), int(self.address_unit),
            self.page_shift, int(self.driver_id), self.frame_count,
            self.prefetch_frames, self.storage_frame_count, self.instruction_count,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "ProgramHeader":
        if len(raw) != HEADER_SIZE:
            raise TruncatedProgramError("file is shorter than a program header")
        magic, version, dialect, unit, shift, driver, t, b, s, n = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise ProgramFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ProgramFormatError(f"unsupported version {version}")
        try:
            return cls(Dialect(dialect), AddressUnit(unit), shift, DriverId(driver),
                       n, t, b, s, version)
        except ValueError as exc:
            raise ProgramFormatError(str(exc)) from None


class ProgramWriter:
    """Streams instructions to a program file.

    The header is rewritten on close with the final instruction count, so
    callers need not know the program length in advance.
    """

    def __init__(self, path: str | os.PathLike, header: ProgramHeader):
        self.path = os.fspath(path)
        self.header = header
        self.count = 0
        self._buf: list[bytes] = []
        try:
            self._fh: BinaryIO = open(self.path, "wb")
        except OSError as exc:
            raise OSError(f"cannot write program {self.path}: {exc}") from exc
        self._fh.write(header.pack())

    def append(self, inst: Instruction) -> None:
        self._buf.append(encode_instruction(inst))
        self.count += 1
        if len(self._buf) >= _CHUNK_RECORDS:
            self._flush()

    def extend(self, insts: Iterable[Instruction]) -> None:
        for inst in insts:
            self.append(inst)

    def _flush(self) -> None:
        self._fh.write(b"".join(self._buf))
        self._buf.clear()

    def close(self) -> ProgramHeader:
        if self._fh.closed:
            return self.header
        self._flush()
        self.header.instruction_count = self.count
        self._fh.seek(0)
        self._fh.write(self.header.pack())
        self._fh.close()
        return self.header

    def __enter__(self) -> "ProgramWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_program(path: str | os.PathLike, header: ProgramHeader,
                  instructions: Iterable[Instruction]) -> ProgramHeader:
    """Write a whole program; the header's count must match the stream."""
    expected = header.instruction_count
    with ProgramWriter(path, header) as w:
        w.extend(instructions)
        n = w.count
    if n != expected:
        raise ProgramFormatError(f"header declares {expected} instructions, stream had {n}")
    return header


def read_header(path: str | os.PathLike) -> ProgramHeader:
    with open(path, "rb") as fh:
        return ProgramHeader.unpack(fh.read(HEADER_SIZE))


def _iter_records(fh: IO[bytes], n: int, path: str) -> Iterator[Instruction]:
    remaining = n
    unpack = _RECORD.iter_unpack
    while remaining:
        k = min(remaining, _CHUNK_RECORDS)
        raw = fh.read(k * RECORD_SIZE)
        if len(raw) < k * RECORD_SIZE:
            raise TruncatedProgramError(
                f"{path}: expected {n} instructions, file ends after {n - remaining + len(raw) // RECORD_SIZE}"
            )
        for f in unpack(raw):
            yield _from_fields(f)
        remaining -= k
    if fh.read(1):
        raise ProgramFormatError(f"{path}: trailing bytes after {n} instructions")


def read_program(path: str | os.PathLike) -> tuple[ProgramHeader, Iterator[Instruction]]:
    """Return the header and a lazy iterator over the instructions."""
    path = os.fspath(path)
    fh = open(path, "rb")
    try:
        header = ProgramHeader.unpack(fh.read(HEADER_SIZE))
    except Exception:
        fh.close()
        raise

    def gen() -> Iterator[Instruction]:
        with fh:
            yield from _iter_records(fh, header.instruction_count, path)

    return header, gen()


def read_program_reversed(path: str | os.PathLike) -> tuple[ProgramHeader, Iterator[tuple[int, Instruction]]]:
    """Iterate (index, instruction) from the last instruction to the first."""
    path = os.fspath(path)
    header = read_header(path)
    n = header.instruction_count
    if os.path.getsize(path) != HEADER_SIZE + n * RECORD_SIZE:
        raise TruncatedProgramError(f"{path}: size does not match {n} instructions")

    def gen() -> Iterator[tuple[int, Instruction]]:
        with open(path, "rb") as fh:
            end = n
            while end > 0:
                start = max(0, end - _CHUNK_RECORDS)
                fh.seek(HEADER_SIZE + start * RECORD_SIZE)
                raw = fh.read((end - start) * RECORD_SIZE)
                recs = [_from_fields(f) for f in _RECORD.iter_unpack(raw)]
                for k in range(len(recs) - 1, -1, -1):
                    yield start + k, recs[k]
                end = start

    return header, gen()


def load_program(path: str | os.PathLike) -> tuple[ProgramHeader, list[Instruction]]:
    header, it = read_program(path)
    return header, list(it)


# --- disassembler -----------------------------------------------------------


def _fmt_addr(a: int, prefix: str, shift: int) -> str:
    return f"{prefix}{a >> shift}:{a & ((1 << shift) - 1)}"


def format_instruction(index: int, inst: Instruction, header: ProgramHeader) -> str:
    op = OpCode(inst.opcode)
    shape = SHAPES[op]
    prefix = "v" if header.dialect == Dialect.VIRTUAL else "p"
    shift = header.page_shift
    head = f"{index:08d} {shape.mnemonic}"

    if op in (OpCode.IssueSwapIn, OpCode.FinishSwapIn):
        return f"{head} p{inst.output} <- s{inst.immediate}"
    if op in (OpCode.IssueSwapOut, OpCode.FinishSwapOut):
        return f"{head} s{inst.immediate} <- p{inst.output}"
    if op in (OpCode.CopyFromPrefetch, OpCode.CopyToPrefetch):
        return f"{head} p{inst.output} <- p{inst.inputs[0]}"
    if op in (OpCode.NetworkBarrier, OpCode.PrintStats, OpCode.Halt):
        return head

    addr = lambda a: _fmt_addr(a, prefix, shift)  # noqa: E731
    if op in NETWORK_OPS:
        peer, length = split_network_immediate(inst.immediate)
        target = addr(inst.output) if op == OpCode.NetworkPostReceive else addr(inst.inputs[0])
        arrow = "<-" if op == OpCode.NetworkPostReceive else "->"
        return f"{head} n{length} {target} {arrow} w{peer}"

    parts = [f"{head} w{inst.width}"]
    if shape.has_output:
        parts.append(addr(inst.output))
    if inst.inputs:
        parts.append("<- " + ", ".join(addr(a) for a in inst.inputs))
    elif op == OpCode.Output:
        parts.append("<-")
    line = " ".join(parts)
    if op in (OpCode.PublicConstant, OpCode.ShiftLeftConst, OpCode.ShiftRightConst,
              OpCode.BatchAddPlain, OpCode.BatchMulPlain, OpCode.Input, OpCode.Copy):
        line += f" #{inst.immediate}"
    return line


def format_header(header: ProgramHeader) -> str:
    lines = [
        f"; dialect={header.dialect.name.lower()} unit={header.address_unit.name.lower()}"
        f" driver={header.driver_id.name.lower()} page_shift={header.page_shift}",
        f"; instructions={header.instruction_count}",
    ]
    if header.dialect == Dialect.PHYSICAL:
        lines.append(
            f"; frames={header.frame_count} prefetch_frames={header.prefetch_frames}"
            f" storage_frames={header.storage_frame_count}"
        )
    return "\n".join(lines)


def disassemble(path: str | os.PathLike, sink: IO[str]) -> None:
    header, insts = read_program(path)
    sink.write(format_header(header) + "\n")
    for i, inst in enumerate(insts):
        sink.write(format_instruction(i, inst, header) + "\n")
