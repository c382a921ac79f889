"""Embedded program builders.

Running a program function under a ``ProgramBuilder`` does not compute
anything: every operator on an ``Integer`` or ``Batch`` handle asks the
placement allocator for a MAGE-virtual address and emits one bytecode
instruction.  Handles hold only an address and a little metadata; when a
handle is dropped (or its variable is rebound) its slot is returned to the
allocator, so builder memory tracks live variables, not program length.

Example::

    def millionaire(opts):
        alice = Integer(32)
        alice.mark_input(Party.GARBLER)
        bob = Integer(32)
        bob.mark_input(Party.EVALUATOR)
        result = alice >= bob
        result.mark_output()
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from .bytecode import (
    AddressUnit, Dialect, DriverId, Instruction, OpCode, ProgramHeader,
    network_immediate,
)
from .drivers import DriverConfig, to_fixed
from .placement import AllocatorError, SlabAllocator


class BuilderError(Exception):
    pass


class Party(enum.IntEnum):
    GARBLER = 0
    EVALUATOR = 1


class Direction(enum.Enum):
    SEND = "send"
    RECEIVE = "receive"


@dataclass
class ProgramOptions:
    worker_id: int = 0
    worker_count: int = 1
    n: int = 0
    driver_id: DriverId = DriverId.BITWIRE
    page_shift: int = 12
    driver: DriverConfig = field(default_factory=DriverConfig)
    # workload-specific knobs (e.g. tile size)
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 <= self.worker_id < self.worker_count:
            raise BuilderError(
                f"worker_id {self.worker_id} invalid for {self.worker_count} workers"
            )

    @property
    def address_unit(self) -> AddressUnit:
        return AddressUnit.WIRE if self.driver_id == DriverId.BITWIRE else AddressUnit.BYTE

    def header(self) -> ProgramHeader:
        return ProgramHeader(Dialect.VIRTUAL, self.address_unit, self.page_shift, self.driver_id)


class InstructionSink(Protocol):
    def append(self, inst: Instruction) -> None: ...


_active: list["ProgramBuilder"] = []


def current_builder() -> "ProgramBuilder":
    if not _active:
        raise BuilderError("no active ProgramBuilder; wrap the program in `with ProgramBuilder(...)`")
    return _active[-1]


class ProgramBuilder:
    """One program build: allocator, instruction sink and options."""

    def __init__(self, sink: InstructionSink, options: ProgramOptions):
        self.sink = sink
        self.options = options
        self.allocator = SlabAllocator(options.page_shift)
        self.emitted = 0
        self.closed = False
        self._size_table = options.driver.size_table()

    def __enter__(self) -> "ProgramBuilder":
        if _active:
            raise BuilderError("only one ProgramBuilder may be active at a time")
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.pop()
        self.closed = True

    # -- plumbing
    def emit(self, op: OpCode, width: int, output: int = 0, inputs: tuple[int, ...] = (),
             immediate: int = 0) -> None:
        self.sink.append(Instruction(op, width, output, inputs, immediate))
        self.emitted += 1

    def allocate(self, size: int) -> int:
        try:
            return self.allocator.allocate(size)
        except AllocatorError as exc:
            raise BuilderError(str(exc)) from exc

    def free(self, addr: int) -> None:
        if not self.closed:
            self.allocator.deallocate(addr)

    @property
    def worker_id(self) -> int:
        return self.options.worker_id

    @property
    def worker_count(self) -> int:
        return self.options.worker_count

    # -- batch size plugin
    @property
    def max_level(self) -> int:
        return self.options.driver.max_level

    @property
    def dimension(self) -> int:
        return self.options.driver.dimension

    def batch_size(self, level: int, relinearized: bool) -> int:
        if not 0 <= level <= self.max_level:
            raise BuilderError(f"level {level} outside 0..{self.max_level}")
        return self._size_table.size(level, relinearized)

    # -- network directives
    def _check_peer(self, peer: int) -> None:
        if peer == self.worker_id:
            raise BuilderError("a worker cannot exchange data with itself")
        if not 0 <= peer < self.worker_count:
            raise BuilderError(f"peer {peer} out of range for {self.worker_count} workers")

    def post_send(self, h: "_Handle", peer: int) -> None:
        self._check_peer(peer)
        h._require()
        self.emit(OpCode.NetworkPostSend, h._width_field(), 0, (h.addr,),
                  network_immediate(peer, h.size))

    def post_receive(self, h: "_Handle", peer: int) -> None:
        self._check_peer(peer)
        if h.addr is None:
            h._bind(self.allocate(h.size))
        self.emit(OpCode.NetworkPostReceive, h._width_field(), h.addr, (),
                  network_immediate(peer, h.size))

    def barrier(self) -> None:
        self.emit(OpCode.NetworkBarrier, 0)


def network_exchange(h: "_Handle", peer: int, direction: Direction) -> None:
    """Post an asynchronous send or receive; data is only settled after ``barrier()``."""
    b = h._builder
    if direction == Direction.SEND:
        b.post_send(h, peer)
    else:
        b.post_receive(h, peer)


def barrier() -> None:
    current_builder().barrier()


class _Handle:
    __slots__ = ("addr", "_builder", "_input_marked", "__weakref__")

    def __init__(self, builder: ProgramBuilder | None = None):
        self._builder = builder or current_builder()
        self.addr: int | None = None
        self._input_marked = False

    @property
    def size(self) -> int:
        raise NotImplementedError

    def _width_field(self) -> int:
        raise NotImplementedError

    def _bind(self, addr: int) -> None:
        self.addr = addr

    def _require(self) -> None:
        if self.addr is None:
            raise BuilderError(f"{type(self).__name__} used before it holds a value")

    def _same_builder(self, other: "_Handle") -> None:
        if other._builder is not self._builder:
            raise BuilderError("handles belong to different program builds")

    def free(self) -> None:
        """Release the handle's address now instead of waiting for it to be dropped."""
        if self.addr is not None:
            addr, self.addr = self.addr, None
            self._builder.free(addr)

    def __del__(self) -> None:
        if self.addr is not None:
            try:
                self._builder.free(self.addr)
            except Exception:
                pass

    def __bool__(self) -> bool:
        raise BuilderError("handles have no build-time truth value (programs must be oblivious)")


class Integer(_Handle):
    """A ``width``-bit unsigned integer stored as ``width`` wires."""

    __slots__ = ("width",)

    def __init__(self, width: int, builder: ProgramBuilder | None = None):
        super().__init__(builder)
        if not 1 <= width < (1 << 16):
            raise BuilderError(f"unsupported integer width {width}")
        self.width = width

    @property
    def size(self) -> int:
        return self.width

    def _width_field(self) -> int:
        return self.width

    def __repr__(self) -> str:
        where = "unset" if self.addr is None else hex(self.addr)
        return f"Integer<{self.width}>@{where}"

    # -- construction helpers
    def _fresh(self, width: int) -> "Integer":
        h = Integer(width, self._builder)
        h._bind(self._builder.allocate(width))
        return h

    @classmethod
    def constant(cls, width: int, value: int, builder: ProgramBuilder | None = None) -> "Integer":
        if not 0 <= value < (1 << 64):
            raise BuilderError("public constants are limited to 64 bits")
        h = cls(width, builder)
        h._bind(h._builder.allocate(width))
        imm = value - (1 << 64) if value >= (1 << 63) else value
        h._builder.emit(OpCode.PublicConstant, width, h.addr, (), imm)
        return h

    @classmethod
    def receive(cls, width: int, peer: int, builder: ProgramBuilder | None = None) -> "Integer":
        h = cls(width, builder)
        h._builder.post_receive(h, peer)
        return h

    def mark_input(self, party: Party = Party.GARBLER) -> "Integer":
        if self._input_marked or self.addr is not None:
            raise BuilderError("mark_input on a handle that already holds a value")
        self._input_marked = True
        self._bind(self._builder.allocate(self.width))
        self._builder.emit(OpCode.Input, self.width, self.addr, (), int(party))
        return self

    def mark_output(self) -> None:
        self._require()
        self._builder.emit(OpCode.Output, self.width, 0, (self.addr,))

    # -- operators
    def _binary(self, op: OpCode, other: "Integer", out_width: int | None = None) -> "Integer":
        if not isinstance(other, Integer):
            return NotImplemented
        self._require()
        other._require()
        self._same_builder(other)
        if self.width != other.width:
            raise BuilderError(f"width mismatch: {self.width} vs {other.width}")
        out = self._fresh(out_width or self.width)
        self._builder.emit(op, self.width, out.addr, (self.addr, other.addr))
        return out

    def _unary(self, op: OpCode, imm: int = 0, out_width: int | None = None) -> "Integer":
        self._require()
        out = self._fresh(out_width or self.width)
        self._builder.emit(op, out.width, out.addr, (self.addr,), imm)
        return out

    def __add__(self, other):
        return self._binary(OpCode.IntAdd, other)

    def __sub__(self, other):
        return self._binary(OpCode.IntSub, other)

    def __and__(self, other):
        return self._binary(OpCode.BitAnd, other)

    def __xor__(self, other):
        return self._binary(OpCode.BitXor, other)

    def __or__(self, other):
        return self._binary(OpCode.BitOr, other)

    def __invert__(self):
        return self._unary(OpCode.BitNot)

    def __lshift__(self, k: int):
        return self._unary(OpCode.ShiftLeftConst, int(k))

    def __rshift__(self, k: int):
        return self._unary(OpCode.ShiftRightConst, int(k))

    def __ge__(self, other):
        return self._binary(OpCode.IntCompareGe, other, 1)

    def __le__(self, other):
        return other.__ge__(self)

    def __lt__(self, other):
        return ~(self >= other)

    def __gt__(self, other):
        return ~(other >= self)

    def eq(self, other: "Integer") -> "Integer":
        return self._binary(OpCode.IntCompareEq, other, 1)

    def increment(self) -> "Integer":
        return self._unary(OpCode.IntIncrement)

    def copy(self) -> "Integer":
        return self._unary(OpCode.Copy, self.width)

    def resize(self, width: int) -> "Integer":
        """Zero-extend or truncate to ``width`` bits."""
        self._require()
        out = self._fresh(width)
        self._builder.emit(OpCode.Copy, width, out.addr, (self.addr,), min(width, self.width))
        return out

    def bit(self, i: int) -> "Integer":
        """Bit ``i`` as a fresh 1-bit integer."""
        if not 0 <= i < self.width:
            raise BuilderError(f"bit {i} out of range for width {self.width}")
        self._require()
        out = self._fresh(1)
        self._builder.emit(OpCode.Copy, 1, out.addr, (self.addr + i,), 1)
        return out

    __hash__ = object.__hash__


Bit = Integer


def mux(selector: Integer, if_true: Integer, if_false: Integer) -> Integer:
    """Oblivious select: ``if_true`` when the selector bit is 1, else ``if_false``."""
    for h in (selector, if_true, if_false):
        h._require()
    selector._same_builder(if_true)
    selector._same_builder(if_false)
    if selector.width != 1:
        raise BuilderError("mux selector must be a single bit")
    if if_true.width != if_false.width:
        raise BuilderError(f"width mismatch: {if_true.width} vs {if_false.width}")
    out = if_true._fresh(if_true.width)
    out._builder.emit(OpCode.Mux, out.width, out.addr,
                      (selector.addr, if_true.addr, if_false.addr))
    return out


def multiply(a: Integer, b: Integer) -> Integer:
    """a * b mod 2^width by shift-and-add over the bits of b."""
    if a.width != b.width:
        raise BuilderError(f"width mismatch: {a.width} vs {b.width}")
    zero = Integer.constant(a.width, 0, a._builder)
    acc = mux(b.bit(0), a, zero)
    for i in range(1, a.width):
        acc = acc + mux(b.bit(i), a << i, zero)
    return acc


def popcount(x: Integer) -> Integer:
    """Number of set bits, computed with a tree of adders."""
    level = [x.bit(i) for i in range(x.width)]
    width = 1
    while len(level) > 1:
        width += 1
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(level[i].resize(width) + level[i + 1].resize(width))
        if len(level) % 2:
            nxt.append(level[-1].resize(width))
        level = nxt
    return level[0]


class Batch(_Handle):
    """A leveled ciphertext handle; its byte size depends on level and relinearization."""

    __slots__ = ("level", "relinearized")

    def __init__(self, level: int | None = None, relinearized: bool = True,
                 builder: ProgramBuilder | None = None):
        super().__init__(builder)
        b = self._builder
        self.level = b.max_level if level is None else level
        if not 0 <= self.level <= b.max_level:
            raise BuilderError(f"level {self.level} outside 0..{b.max_level}")
        self.relinearized = relinearized

    @property
    def size(self) -> int:
        return self._builder.batch_size(self.level, self.relinearized)

    def _width_field(self) -> int:
        return self._builder.dimension

    def __repr__(self) -> str:
        where = "unset" if self.addr is None else hex(self.addr)
        tag = "" if self.relinearized else ",unrelin"
        return f"Batch<L{self.level}{tag}>@{where}"

    def _fresh(self, level: int, relinearized: bool) -> "Batch":
        h = Batch(level, relinearized, self._builder)
        h._bind(self._builder.allocate(h.size))
        return h

    @classmethod
    def receive(cls, peer: int, level: int | None = None, relinearized: bool = True,
                builder: ProgramBuilder | None = None) -> "Batch":
        h = cls(level, relinearized, builder)
        h._builder.post_receive(h, peer)
        return h

    def mark_input(self, party: Party = Party.GARBLER) -> "Batch":
        if self._input_marked or self.addr is not None:
            raise BuilderError("mark_input on a handle that already holds a value")
        if not self.relinearized:
            raise BuilderError("inputs are relinearized ciphertexts")
        self._input_marked = True
        self._bind(self._builder.allocate(self.size))
        self._builder.emit(OpCode.Input, self._width_field(), self.addr, (),
                           int(party) | (self.level << 8))
        return self

    def mark_output(self) -> None:
        self._require()
        if not self.relinearized:
            raise BuilderError("relinearize a product before revealing it")
        self._builder.emit(OpCode.Output, self._width_field(), 0, (self.addr,))

    def _pair(self, other: "Batch") -> None:
        if not isinstance(other, Batch):
            raise BuilderError("batch operations need Batch operands")
        self._require()
        other._require()
        self._same_builder(other)
        if self.level != other.level:
            raise BuilderError(f"level mismatch: {self.level} vs {other.level}")

    def __add__(self, other: "Batch") -> "Batch":
        self._pair(other)
        if self.relinearized != other.relinearized:
            raise BuilderError("cannot add a relinearized and an unrelinearized ciphertext")
        out = self._fresh(self.level, self.relinearized)
        self._builder.emit(OpCode.BatchAdd, self._width_field(), out.addr, (self.addr, other.addr))
        return out

    def __mul__(self, other: "Batch") -> "Batch":
        """Element-wise product, left unrelinearized (see ``relin_rescale``)."""
        self._pair(other)
        if self.level == 0:
            raise BuilderError("a level-0 ciphertext cannot be used for multiplication")
        if not (self.relinearized and other.relinearized):
            raise BuilderError("multiplication needs relinearized operands")
        out = self._fresh(self.level, False)
        self._builder.emit(OpCode.BatchMulNoRelin, self._width_field(), out.addr,
                           (self.addr, other.addr))
        return out

    mul_no_relin = __mul__

    def relin_rescale(self) -> "Batch":
        self._require()
        if self.relinearized:
            raise BuilderError("relin_rescale needs an unrelinearized product")
        out = self._fresh(self.level - 1, True)
        self._builder.emit(OpCode.BatchRelinRescale, self._width_field(), out.addr, (self.addr,))
        return out

    def add_plain(self, value) -> "Batch":
        self._require()
        out = self._fresh(self.level, self.relinearized)
        self._builder.emit(OpCode.BatchAddPlain, self._width_field(), out.addr, (self.addr,),
                           to_fixed(value))
        return out

    def mul_plain(self, value) -> "Batch":
        """Multiply by a public constant; consumes one level."""
        self._require()
        if not self.relinearized:
            raise BuilderError("plaintext multiply needs a relinearized operand")
        if self.level == 0:
            raise BuilderError("a level-0 ciphertext cannot be used for multiplication")
        out = self._fresh(self.level - 1, True)
        self._builder.emit(OpCode.BatchMulPlain, self._width_field(), out.addr, (self.addr,),
                           to_fixed(value))
        return out

    __hash__ = object.__hash__


class ShardedArray:
    """A global array of ``total_length`` elements split evenly across workers.

    Worker ``w`` owns the contiguous global range ``[w*L, (w+1)*L)`` where
    ``L = total_length / worker_count``.
    """

    def __init__(self, total_length: int, worker_id: int, worker_count: int):
        if total_length % worker_count:
            raise BuilderError("sharded length must be divisible by the worker count")
        self.total_length = total_length
        self.worker_id = worker_id
        self.worker_count = worker_count
        self.local_length = total_length // worker_count
        self.start = worker_id * self.local_length
        self.end = self.start + self.local_length
        self.items: list[Any] = [None] * self.local_length

    @classmethod
    def for_builder(cls, total_length: int, builder: ProgramBuilder | None = None) -> "ShardedArray":
        b = builder or current_builder()
        return cls(total_length, b.worker_id, b.worker_count)

    def owner(self, g: int) -> int:
        return g // self.local_length

    def to_global(self, i: int) -> int:
        return self.start + i

    def to_local(self, g: int) -> int:
        if not self.start <= g < self.end:
            raise IndexError(f"global index {g} not owned by worker {self.worker_id}")
        return g - self.start

    def __len__(self) -> int:
        return self.local_length

    def __getitem__(self, i: int):
        return self.items[i]

    def __setitem__(self, i: int, v) -> None:
        self.items[i] = v

    def exchange(self, peer: int, receive: Callable[[int, Any], Any]) -> list[Any]:
        """Send every local element to ``peer`` and receive its elements.

        ``receive(peer, local_item)`` must post a receive shaped like the
        local item and return the new handle.  A barrier is emitted before
        returning, so the received handles are safe to read.
        """
        b = current_builder()
        for item in self.items:
            b.post_send(item, peer)
        got = [receive(peer, item) for item in self.items]
        b.barrier()
        return got
