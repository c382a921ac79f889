"""Interpreter for memory programs.

The engine owns one flat ``uint8`` array holding ``T + B`` frames (or, for
a virtual program, enough frames to cover every page it touches).  It
reads each instruction's operands from that array, hands protocol work to
a driver, and writes the results back.  Swap, prefetch-copy and network
directives are handled here without involving the driver.

Bit-wire programs are executed by expanding each integer instruction into
a small subcircuit of AND/XOR gate calls (a ripple-carry adder for
``IntAdd``, a borrow chain for ``IntCompareGe``, ...).  Batch programs map
one-to-one onto driver calls.

Time is kept on a virtual clock: every gate or batch operation advances it
by a configured constant, and a ``Finish`` directive that waits on a
transfer completing later than "now" counts the difference as stall time.
"""

from __future__ import annotations

import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass
from typing import IO, Iterable, Iterator

import numpy as np

from .bytecode import (
    DIRECTIVES, AddressUnit, Dialect, DriverId, Instruction, OpCode, ProgramHeader,
    memory_operands, read_program, split_network_immediate,
)
from .drivers import (
    BitWireDriver, Ciphertext, LeveledBatchDriver, ProtocolError, format_fixed, to_fixed,
)
from .storage import SimulatedStorage, VirtualClock

log = logging.getLogger(__name__)

_U64 = (1 << 64) - 1


class EngineError(Exception):
    pass


class CorruptProgramError(EngineError):
    """The program violates directive bookkeeping (tokens, frames, channels)."""


class IncompatibleInstructionError(EngineError):
    """The instruction cannot be executed by this engine/driver pairing."""


class MemoryBoundsError(CorruptProgramError):
    pass


class InputError(EngineError):
    pass


@dataclass
class TimingModel:
    """Virtual cost of compute, in seconds."""

    gate_time: float = 50e-9
    batch_op_time: float = 1e-3
    # fixed dispatch cost of every protocol instruction, on top of its gates or ops
    instruction_time: float = 0.0
    page_copy_time: float = 0.0


@dataclass
class ExecStats:
    instructions_executed: int = 0
    swap_ins: int = 0
    swap_outs: int = 0
    finish_swapin_stalls: int = 0
    stall_time: float = 0.0
    compute_time: float = 0.0
    total_virtual_time: float = 0.0
    resident_highwater_frames: int = 0
    network_bytes: int = 0
    gates: int = 0
    batch_ops: int = 0
    outputs: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def _int_to_bits(value: int, width: int) -> np.ndarray:
    nbytes = (width + 7) // 8
    raw = np.frombuffer(value.to_bytes(nbytes, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:width]


def _bits_to_int(bits: np.ndarray) -> int:
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def _virtual_frames(path, page_shift: int) -> int:
    """Frames needed to execute a virtual program with an identity mapping."""
    _, insts = read_program(path)
    top = -1
    for inst in insts:
        for addr, _ in memory_operands(inst):
            top = max(top, addr >> page_shift)
    return top + 1


class Engine:
    """Executes one worker's program against a driver, storage and channel."""

    def __init__(self, header: ProgramHeader, driver, storage=None, channel=None,
                 timing: TimingModel | None = None, frames: int | None = None):
        if driver.driver_id != header.driver_id:
            raise IncompatibleInstructionError(
                f"program needs driver {header.driver_id.name}, got {driver.driver_id.name}"
            )
        expect_unit = AddressUnit.WIRE if header.driver_id == DriverId.BITWIRE else AddressUnit.BYTE
        if header.address_unit != expect_unit:
            raise IncompatibleInstructionError("address unit does not match the driver")
        self.header = header
        self.driver = driver
        self.storage = storage
        self.channel = channel
        self.timing = timing or TimingModel()
        self.unit = driver.unit_bytes
        self.shift = header.page_shift
        self.frame_bytes = header.page_size * self.unit
        if frames is None:
            frames = header.total_frames
        self.frames = frames
        self.mem = np.zeros(frames * self.frame_bytes, dtype=np.uint8)
        self.clock = getattr(storage, "clock", None) or VirtualClock()
        self.simulated = storage is None or isinstance(storage, SimulatedStorage)
        self.stats = ExecStats()
        self._in_tokens: dict[int, tuple[int, object]] = {}
        self._out_tokens: dict[int, tuple[int, object]] = {}
        self._recv_posted = 0
        self._top_frame = -1
        self._halted = False
        self._outputs: IO[str] | None = None
        self._inputs: Iterator[str] | None = None
        if isinstance(driver, BitWireDriver):
            self.wires = self.mem.reshape(-1, driver.wire_bytes)
            self._ops = self._bit_dispatch()
        elif isinstance(driver, LeveledBatchDriver):
            self._ops = self._batch_dispatch()
        else:
            raise IncompatibleInstructionError(f"unsupported driver {type(driver).__name__}")
        self._dir = {
            OpCode.IssueSwapIn: self._issue_in,
            OpCode.FinishSwapIn: self._finish_in,
            OpCode.IssueSwapOut: self._issue_out,
            OpCode.FinishSwapOut: self._finish_out,
            OpCode.CopyFromPrefetch: self._copy_frame,
            OpCode.CopyToPrefetch: self._copy_frame,
            OpCode.NetworkPostSend: self._net_send,
            OpCode.NetworkPostReceive: self._net_recv,
            OpCode.NetworkBarrier: self._net_barrier,
            OpCode.PrintStats: self._print_stats,
            OpCode.Halt: self._halt,
        }

    # ------------------------------------------------------------------ memory
    def _touch(self, addr: int, n_units: int) -> None:
        end = addr + n_units
        if end > self.frames << self.shift:
            raise MemoryBoundsError(
                f"access to units [{addr}, {end}) beyond {self.frames} frames"
            )
        top = (end - 1) >> self.shift
        if top > self._top_frame:
            self._top_frame = top

    def frame_view(self, frame: int) -> np.ndarray:
        if not 0 <= frame < self.frames:
            raise MemoryBoundsError(f"frame {frame} outside memory of {self.frames} frames")
        if frame > self._top_frame:
            self._top_frame = frame
        fb = self.frame_bytes
        return self.mem[frame * fb:(frame + 1) * fb]

    def _range(self, addr: int, n_units: int) -> np.ndarray:
        self._touch(addr, n_units)
        return self.mem[addr * self.unit:(addr + n_units) * self.unit]

    # -------------------------------------------------------------- bit wires
    def _rd(self, addr: int, width: int) -> np.ndarray:
        self._touch(addr, width)
        return self.driver.decode(self.wires[addr:addr + width])

    def _wr(self, addr: int, bits: np.ndarray) -> None:
        self._touch(addr, len(bits))
        self.wires[addr:addr + len(bits)] = self.driver.encode(bits)

    def _bit_dispatch(self) -> dict:
        return {
            OpCode.Input: self._b_input,
            OpCode.Output: self._b_output,
            OpCode.PublicConstant: self._b_const,
            OpCode.IntAdd: self._b_add,
            OpCode.IntSub: self._b_sub,
            OpCode.IntIncrement: self._b_inc,
            OpCode.BitAnd: self._b_and,
            OpCode.BitXor: self._b_xor,
            OpCode.BitOr: self._b_or,
            OpCode.BitNot: self._b_not,
            OpCode.ShiftLeftConst: self._b_shl,
            OpCode.ShiftRightConst: self._b_shr,
            OpCode.IntCompareGe: self._b_ge,
            OpCode.IntCompareEq: self._b_eq,
            OpCode.Mux: self._b_mux,
            OpCode.Copy: self._b_copy,
        }

    def _next_input(self) -> str:
        for line in self._inputs:
            line = line.strip()
            if line:
                return line
        raise InputError("input underrun: the program reads more values than the input file holds")

    def _b_input(self, inst: Instruction) -> None:
        text = self._next_input()
        try:
            value = int(text)
        except ValueError:
            raise InputError(f"expected a decimal integer, got {text!r}") from None
        w = inst.width
        if not 0 <= value < (1 << w):
            raise InputError(f"input {value} does not fit in {w} bits")
        self._wr(inst.output, self.driver.input(_int_to_bits(value, w)))

    def _b_output(self, inst: Instruction) -> None:
        bits = self.driver.reveal(self._rd(inst.inputs[0], inst.width))
        self._outputs.write(f"{_bits_to_int(bits)}\n")
        self.stats.outputs += 1

    def _b_const(self, inst: Instruction) -> None:
        bits = _int_to_bits(inst.immediate & _U64 & ((1 << inst.width) - 1), inst.width)
        self._wr(inst.output, self.driver.constant(bits))

    def _operands(self, inst: Instruction) -> tuple[list[int], list[int]]:
        a = self._rd(inst.inputs[0], inst.width).tolist()
        b = self._rd(inst.inputs[1], inst.width).tolist()
        return a, b

    def _ripple(self, a: list[int], b: list[int], carry: int, invert_b: bool) -> tuple[list[int], int]:
        """Full-adder chain: 4 XOR + 1 AND per bit; returns (sum bits, carry out)."""
        d = self.driver
        out = []
        for ai, bi in zip(a, b):
            if invert_b:
                bi = d.xor(bi, 1)
            x1 = d.xor(ai, carry)
            x2 = d.xor(bi, carry)
            out.append(d.xor(x1, bi))
            carry = d.xor(d.and_(x1, x2), carry)
        return out, carry

    def _b_add(self, inst: Instruction) -> None:
        a, b = self._operands(inst)
        s, _ = self._ripple(a, b, 0, False)
        self._wr(inst.output, np.array(s, dtype=np.uint8))

    def _b_sub(self, inst: Instruction) -> None:
        a, b = self._operands(inst)
        s, _ = self._ripple(a, b, 1, True)
        self._wr(inst.output, np.array(s, dtype=np.uint8))

    def _b_inc(self, inst: Instruction) -> None:
        d = self.driver
        carry = 1
        out = []
        for ai in self._rd(inst.inputs[0], inst.width).tolist():
            out.append(d.xor(ai, carry))
            carry = d.and_(ai, carry)
        self._wr(inst.output, np.array(out, dtype=np.uint8))

    def _b_ge(self, inst: Instruction) -> None:
        # a >= b  <=>  no borrow out of a - b, i.e. carry out of a + ~b + 1
        d = self.driver
        a, b = self._operands(inst)
        carry = 1
        for ai, bi in zip(a, b):
            nb = d.xor(bi, 1)
            carry = d.xor(d.and_(d.xor(ai, carry), d.xor(nb, carry)), carry)
        self._wr(inst.output, np.array([carry], dtype=np.uint8))

    def _b_eq(self, inst: Instruction) -> None:
        d = self.driver
        a = self._rd(inst.inputs[0], inst.width)
        b = self._rd(inst.inputs[1], inst.width)
        same = d.xor_vec(d.xor_vec(a, b), np.ones_like(a)).tolist()
        # balanced AND tree over the XNOR bits
        while len(same) > 1:
            nxt = [d.and_(same[i], same[i + 1]) for i in range(0, len(same) - 1, 2)]
            if len(same) % 2:
                nxt.append(same[-1])
            same = nxt
        self._wr(inst.output, np.array(same, dtype=np.uint8))

    def _b_and(self, inst: Instruction) -> None:
        a = self._rd(inst.inputs[0], inst.width)
        b = self._rd(inst.inputs[1], inst.width)
        self._wr(inst.output, self.driver.and_vec(a, b))

    def _b_xor(self, inst: Instruction) -> None:
        a = self._rd(inst.inputs[0], inst.width)
        b = self._rd(inst.inputs[1], inst.width)
        self._wr(inst.output, self.driver.xor_vec(a, b))

    def _b_or(self, inst: Instruction) -> None:
        d = self.driver
        a = self._rd(inst.inputs[0], inst.width)
        b = self._rd(inst.inputs[1], inst.width)
        self._wr(inst.output, d.xor_vec(d.xor_vec(a, b), d.and_vec(a, b)))

    def _b_not(self, inst: Instruction) -> None:
        a = self._rd(inst.inputs[0], inst.width)
        self._wr(inst.output, self.driver.xor_vec(a, np.ones_like(a)))

    def _b_shl(self, inst: Instruction) -> None:
        w, k = inst.width, inst.immediate
        a = self._rd(inst.inputs[0], w)
        out = np.zeros(w, dtype=np.uint8)
        if 0 <= k < w:
            out[k:] = a[:w - k]
        self._wr(inst.output, out)

    def _b_shr(self, inst: Instruction) -> None:
        w, k = inst.width, inst.immediate
        a = self._rd(inst.inputs[0], w)
        out = np.zeros(w, dtype=np.uint8)
        if 0 <= k < w:
            out[:w - k] = a[k:]
        self._wr(inst.output, out)

    def _b_mux(self, inst: Instruction) -> None:
        d = self.driver
        w = inst.width
        s = self._rd(inst.inputs[0], 1)
        t = self._rd(inst.inputs[1], w)
        f = self._rd(inst.inputs[2], w)
        sel = np.broadcast_to(s, (w,))
        self._wr(inst.output, d.xor_vec(d.and_vec(d.xor_vec(t, f), sel), f))

    def _b_copy(self, inst: Instruction) -> None:
        w = inst.width
        n = inst.immediate or w
        if not 0 < n:
            raise CorruptProgramError(f"copy of {n} source wires")
        src = self._rd(inst.inputs[0], n)
        out = np.zeros(w, dtype=np.uint8)
        k = min(n, w)
        out[:k] = src[:k]
        self._wr(inst.output, out)

    # ---------------------------------------------------------------- batches
    def _batch_dispatch(self) -> dict:
        return {
            OpCode.Input: self._c_input,
            OpCode.Output: self._c_output,
            OpCode.BatchAdd: self._c_add,
            OpCode.BatchMulNoRelin: self._c_mul,
            OpCode.BatchRelinRescale: self._c_relin,
            OpCode.BatchAddPlain: self._c_add_plain,
            OpCode.BatchMulPlain: self._c_mul_plain,
        }

    def _c_read(self, addr: int) -> Ciphertext:
        self._touch(addr, 1)
        ct = self.driver.read(self.mem, addr)
        self._touch(addr, self.driver.size_of(ct.level, ct.relinearized))
        return ct

    def _c_write(self, addr: int, ct: Ciphertext) -> None:
        self._touch(addr, self.driver.size_of(ct.level, ct.relinearized))
        self.driver.write(self.mem, addr, ct)

    def _c_input(self, inst: Instruction) -> None:
        text = self._next_input()
        fields = text.replace(",", " ").split()
        dim = self.driver.dimension
        if len(fields) > dim:
            raise InputError(f"input row has {len(fields)} values, dimension is {dim}")
        try:
            values = [to_fixed(f) for f in fields] + [0] * (dim - len(fields))
        except ArithmeticError:
            raise InputError(f"malformed input row {text[:60]!r}") from None
        level = (inst.immediate >> 8) & 0xFF
        self._c_write(inst.output, self.driver.encode_input(values, level))

    def _c_output(self, inst: Instruction) -> None:
        vals = self.driver.decode_output(self._c_read(inst.inputs[0]))
        self._outputs.write(" ".join(format_fixed(v) for v in vals) + "\n")
        self.stats.outputs += 1

    def _c_add(self, inst: Instruction) -> None:
        a, b = self._c_read(inst.inputs[0]), self._c_read(inst.inputs[1])
        self._c_write(inst.output, self.driver.add(a, b))

    def _c_mul(self, inst: Instruction) -> None:
        a, b = self._c_read(inst.inputs[0]), self._c_read(inst.inputs[1])
        self._c_write(inst.output, self.driver.mul(a, b))

    def _c_relin(self, inst: Instruction) -> None:
        self._c_write(inst.output, self.driver.relin_rescale(self._c_read(inst.inputs[0])))

    def _c_add_plain(self, inst: Instruction) -> None:
        a = self._c_read(inst.inputs[0])
        self._c_write(inst.output, self.driver.add_plain(a, inst.immediate))

    def _c_mul_plain(self, inst: Instruction) -> None:
        a = self._c_read(inst.inputs[0])
        self._c_write(inst.output, self.driver.mul_plain(a, inst.immediate))

    # ------------------------------------------------------------- directives
    def _wait(self, token) -> bool:
        """Wait on a storage token; returns True if the engine stalled."""
        if self.simulated:
            done = self.storage.wait(token)
            if done > self.clock.now:
                self.stats.stall_time += done - self.clock.now
                self.clock.now = done
                return True
            return False
        t0 = time.perf_counter()
        self.storage.wait(token)
        waited = time.perf_counter() - t0
        self.stats.stall_time += waited
        return waited > 1e-6

    def _need_storage(self) -> None:
        if self.storage is None:
            raise CorruptProgramError("swap directive in a program run without storage")

    def _issue_in(self, inst: Instruction) -> None:
        self._need_storage()
        f = inst.output
        if f in self._in_tokens or f in self._out_tokens:
            raise CorruptProgramError(f"frame {f} already has a transfer in flight")
        tok = self.storage.issue_read(inst.immediate, self.frame_view(f))
        self._in_tokens[f] = (inst.immediate, tok)
        self.stats.swap_ins += 1

    def _finish_in(self, inst: Instruction) -> None:
        entry = self._in_tokens.pop(inst.output, None)
        if entry is None or entry[0] != inst.immediate:
            raise CorruptProgramError(
                f"FinishSwapIn p{inst.output} <- s{inst.immediate} without a matching issue"
            )
        if self._wait(entry[1]):
            self.stats.finish_swapin_stalls += 1

    def _issue_out(self, inst: Instruction) -> None:
        self._need_storage()
        f = inst.output
        if f in self._in_tokens or f in self._out_tokens:
            raise CorruptProgramError(f"frame {f} already has a transfer in flight")
        tok = self.storage.issue_write(inst.immediate, self.frame_view(f))
        self._out_tokens[f] = (inst.immediate, tok)
        self.stats.swap_outs += 1

    def _finish_out(self, inst: Instruction) -> None:
        entry = self._out_tokens.pop(inst.output, None)
        if entry is None or entry[0] != inst.immediate:
            raise CorruptProgramError(
                f"FinishSwapOut s{inst.immediate} <- p{inst.output} without a matching issue"
            )
        self._wait(entry[1])

    def _copy_frame(self, inst: Instruction) -> None:
        dst, src = inst.output, inst.inputs[0]
        if src in self._in_tokens or dst in self._in_tokens or dst in self._out_tokens:
            raise CorruptProgramError(f"page copy p{dst} <- p{src} races an in-flight transfer")
        self.frame_view(dst)[:] = self.frame_view(src)
        self.clock.now += self.timing.page_copy_time
        self.stats.compute_time += self.timing.page_copy_time

    def _need_channel(self) -> None:
        if self.channel is None:
            raise CorruptProgramError("network directive in a program run without a channel")

    def _net_send(self, inst: Instruction) -> None:
        self._need_channel()
        peer, length = split_network_immediate(inst.immediate)
        data = self._range(inst.inputs[0], length).tobytes()
        self.channel.post_send(peer, data)
        self.stats.network_bytes += len(data)

    def _net_recv(self, inst: Instruction) -> None:
        self._need_channel()
        peer, length = split_network_immediate(inst.immediate)
        self.channel.post_receive(peer, self._range(inst.output, length))

    def _net_barrier(self, inst: Instruction) -> None:
        if self.channel is not None:
            self.channel.barrier()

    def _print_stats(self, inst: Instruction) -> None:
        log.info("stats: %s", json.dumps(self.stats.as_dict(), sort_keys=True))

    def _halt(self, inst: Instruction) -> None:
        self._halted = True

    # -------------------------------------------------------------------- run
    def run(self, instructions: Iterable[Instruction], inputs: Iterable[str],
            outputs: IO[str]) -> ExecStats:
        self._inputs = iter(inputs)
        self._outputs = outputs
        st = self.stats
        d = self.driver
        ops, dirs = self._ops, self._dir
        is_bit = isinstance(d, BitWireDriver)
        gate_t, batch_t = self.timing.gate_time, self.timing.batch_op_time
        inst_t = self.timing.instruction_time
        clock = self.clock
        wall0 = time.perf_counter()
        for index, inst in enumerate(instructions):
            op = inst.opcode
            st.instructions_executed += 1
            try:
                if op in DIRECTIVES:
                    dirs[op](inst)
                    if self._halted:
                        break
                    continue
                fn = ops.get(op)
                if fn is None:
                    raise IncompatibleInstructionError(
                        f"{op.name} is not supported by the {type(d).__name__} engine"
                    )
                before = d.gates if is_bit else d.ops
                fn(inst)
                cost = inst_t + (((d.gates - before) * gate_t) if is_bit else ((d.ops - before) * batch_t))
                clock.now += cost
                st.compute_time += cost
            except (EngineError, ProtocolError) as exc:
                raise type(exc)(f"instruction {index} ({op.name}): {exc}") from exc
        if self._in_tokens or self._out_tokens:
            raise CorruptProgramError("program ended with swap transfers still in flight")
        if self.channel is not None and getattr(self.channel, "pending", 0):
            raise CorruptProgramError("program ended with network receives never settled")
        if is_bit:
            st.gates = d.gates
        else:
            st.batch_ops = d.ops
        st.resident_highwater_frames = self._top_frame + 1
        if self.simulated:
            st.total_virtual_time = clock.now
        else:
            st.total_virtual_time = time.perf_counter() - wall0
            st.compute_time = max(0.0, st.total_virtual_time - st.stall_time)
        return st


def execute(program_path: str | os.PathLike, driver, storage=None, channel=None,
            inputs: Iterable[str] = (), outputs: IO[str] | None = None,
            timing: TimingModel | None = None) -> ExecStats:
    """Run a program file.  Virtual programs run with an identity page mapping."""
    header, insts = read_program(program_path)
    frames = None
    if header.dialect == Dialect.VIRTUAL:
        frames = _virtual_frames(program_path, header.page_shift)
    elif storage is not None and hasattr(storage, "capacity") and storage.capacity < header.storage_frame_count:
        raise EngineError("storage is smaller than the program's storage frame count")
    engine = Engine(header, driver, storage, channel, timing, frames)
    if outputs is None:
        outputs = io.StringIO()
    return engine.run(insts, inputs, outputs)
