"""Protocol drivers: value semantics underneath the engine.

Neither driver performs cryptography.  Each one stores values in the
engine's flat memory array with the footprint and dirtying behaviour of
the protocol it stands in for, while computing on plaintext:

* ``BitWireDriver`` models garbled-circuit wires.  A wire occupies
  ``wire_bytes`` bytes (16 by default); byte 0 holds the bit and the rest
  is padding derived from the bit and a per-program seed.
* ``LeveledBatchDriver`` models leveled CKKS-style ciphertexts: vectors of
  fixed-point numbers tagged with a level and a relinearized flag, whose
  byte size depends on both.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .bytecode import DriverId

SCALE_BITS = 20
SCALE = 1 << SCALE_BITS
_HALF = 1 << (SCALE_BITS - 1)
KIB = 1024


class ProtocolError(Exception):
    pass


class CorruptValueError(ProtocolError):
    """A value read from memory is not a well-formed wire or ciphertext."""


# --- fixed-point helpers -----------------------------------------------------


def to_fixed(value: str | int | float | Decimal | Fraction) -> int:
    """Scale a real number by 2^20 and round half-to-even."""
    if isinstance(value, Fraction):
        d = value * SCALE
        return round(d)
    d = Decimal(str(value)) if not isinstance(value, Decimal) else value
    return int((d * SCALE).to_integral_value(rounding=ROUND_HALF_EVEN))


def rescale(v: int) -> int:
    """Drop one factor of 2^20, rounding half up."""
    return (v + _HALF) >> SCALE_BITS


def format_fixed(v: int, scale_bits: int = SCALE_BITS) -> str:
    """Exact decimal rendering of v / 2^scale_bits."""
    sign = "-" if v < 0 else ""
    v = abs(v)
    whole, frac = divmod(v, 1 << scale_bits)
    if not frac:
        return f"{sign}{whole}"
    digits = str(frac * 5 ** scale_bits).rjust(scale_bits, "0").rstrip("0")
    return f"{sign}{whole}.{digits}"


# --- bit wires ---------------------------------------------------------------


class BitWireDriver:
    """Plaintext stand-in for a garbled-circuit protocol (AND/XOR gates).

    Gate methods count their invocations in ``gates`` so the engine can
    charge virtual compute time per gate.
    """

    driver_id = DriverId.BITWIRE

    def __init__(self, wire_bytes: int = 16, seed: int = 0):
        if wire_bytes < 2:
            raise ValueError("wire_bytes must be at least 2")
        self.wire_bytes = wire_bytes
        self.seed = seed
        self.gates = 0
        pad = np.zeros((2, wire_bytes), dtype=np.uint8)
        for bit in (0, 1):
            h = hashlib.blake2b(f"wire:{seed}:{bit}".encode(), digest_size=64).digest()
            row = np.frombuffer((h * (wire_bytes // 64 + 1))[: wire_bytes], dtype=np.uint8).copy()
            row[0] = bit
            row[1] |= 0x80  # never all-zero, so zeroed memory is not a valid wire
            pad[bit] = row
        self.pad = pad

    @property
    def unit_bytes(self) -> int:
        return self.wire_bytes

    # scalar gates
    def and_(self, a: int, b: int) -> int:
        self.gates += 1
        return a & b

    def xor(self, a: int, b: int) -> int:
        self.gates += 1
        return a ^ b

    # vector gates: one gate per element
    def and_vec(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.gates += a.size
        return a & b

    def xor_vec(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.gates += a.size
        return a ^ b

    def constant(self, bits: np.ndarray) -> np.ndarray:
        # public constants are free in garbled circuits
        return bits

    def input(self, bits: np.ndarray) -> np.ndarray:
        self.gates += bits.size
        return bits

    def reveal(self, bits: np.ndarray) -> np.ndarray:
        self.gates += bits.size
        return bits

    # memory encoding
    def encode(self, bits: np.ndarray) -> np.ndarray:
        return self.pad[bits]

    def decode(self, rows: np.ndarray) -> np.ndarray:
        bits = rows[:, 0]
        if bits.max(initial=0) > 1 or not np.array_equal(rows, self.pad[bits]):
            raise CorruptValueError("memory does not hold valid wire values")
        return bits


# --- leveled batches ---------------------------------------------------------

_CT_MAGIC = 0x4C425443  # "CTBL"
_CT_HEADER = np.dtype([("magic", "<u4"), ("level", "u1"), ("relin", "u1"),
                       ("pad", "<u2"), ("count", "<u4"), ("check", "<u4")])
CT_HEADER_BYTES = _CT_HEADER.itemsize


class Ciphertext(NamedTuple):
    level: int
    relinearized: bool
    slots: np.ndarray  # int64, fixed point (scale 2^20, or 2^40 if not relinearized)


@dataclass(frozen=True)
class SizeTable:
    relin_unit: int = 64 * KIB
    unrelin_unit: int = 96 * KIB

    def size(self, level: int, relinearized: bool) -> int:
        unit = self.relin_unit if relinearized else self.unrelin_unit
        return unit * (level + 1)


class LeveledBatchDriver:
    """Plaintext stand-in for leveled CKKS (add / multiply / relinearize)."""

    driver_id = DriverId.BATCH
    unit_bytes = 1

    def __init__(self, max_level: int = 2, dimension: int = 4096,
                 sizes: SizeTable | None = None, seed: int = 0):
        self.max_level = max_level
        self.dimension = dimension
        self.sizes = sizes or SizeTable()
        self.seed = seed
        self.ops = 0
        need = CT_HEADER_BYTES + 8 * dimension
        smallest = min(self.sizes.size(0, True), self.sizes.size(0, False))
        if smallest < need:
            raise ValueError(
                f"size table too small: a level-0 ciphertext needs {need} bytes, table gives {smallest}"
            )
        if not (self.sizes.unrelin_unit > self.sizes.relin_unit > 0):
            raise ValueError("unrelinearized ciphertexts must be larger than relinearized ones")

    def size_of(self, level: int, relinearized: bool = True) -> int:
        if not 0 <= level <= self.max_level:
            raise ProtocolError(f"level {level} outside 0..{self.max_level}")
        return self.sizes.size(level, relinearized)

    # --- memory encoding
    def _check(self, level: int, relin: bool) -> int:
        return (self.seed * 2654435761 + level * 97 + relin * 13 + 0x5A5A) & 0xFFFFFFFF

    def write(self, mem: np.ndarray, addr: int, ct: Ciphertext) -> int:
        size = self.size_of(ct.level, ct.relinearized)
        view = mem[addr: addr + size]
        if view.size != size:
            raise ProtocolError("ciphertext write runs past the end of memory")
        hdr = np.zeros(1, dtype=_CT_HEADER)
        hdr["magic"] = _CT_MAGIC
        hdr["level"] = ct.level
        hdr["relin"] = int(ct.relinearized)
        hdr["count"] = self.dimension
        hdr["check"] = self._check(ct.level, ct.relinearized)
        view[:CT_HEADER_BYTES] = hdr.view(np.uint8)
        body = CT_HEADER_BYTES + 8 * self.dimension
        view[CT_HEADER_BYTES:body] = ct.slots.astype("<i8").view(np.uint8)
        view[body:] = 0xA5
        return size

    def read(self, mem: np.ndarray, addr: int) -> Ciphertext:
        raw = mem[addr: addr + CT_HEADER_BYTES]
        if raw.size != CT_HEADER_BYTES:
            raise CorruptValueError(f"ciphertext at {addr:#x} runs past the end of memory")
        hdr = raw.view(_CT_HEADER)[0]
        level, relin = int(hdr["level"]), bool(hdr["relin"])
        if (hdr["magic"] != _CT_MAGIC or hdr["count"] != self.dimension
                or hdr["check"] != self._check(level, relin) or level > self.max_level):
            raise CorruptValueError(f"memory at {addr:#x} does not hold a valid ciphertext")
        body = mem[addr + CT_HEADER_BYTES: addr + CT_HEADER_BYTES + 8 * self.dimension]
        return Ciphertext(level, relin, body.view("<i8").copy())

    def encode_input(self, values: Sequence[int], level: int) -> Ciphertext:
        if len(values) != self.dimension:
            raise ProtocolError(f"expected {self.dimension} slot values, got {len(values)}")
        self.ops += 1
        return Ciphertext(level, True, np.array(values, dtype=np.int64))

    def decode_output(self, ct: Ciphertext) -> list[int]:
        if not ct.relinearized:
            raise ProtocolError("only relinearized ciphertexts can be revealed")
        self.ops += 1
        return ct.slots.tolist()

    # --- arithmetic
    @staticmethod
    def _checked_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            r = a + b
        if np.any(((a ^ r) & (b ^ r)) < 0):
            raise ProtocolError("fixed-point overflow in addition")
        return r

    @staticmethod
    def _checked_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if np.any(np.abs(a.astype(np.float64) * b.astype(np.float64)) >= 2.0 ** 62):
            raise ProtocolError("fixed-point overflow in multiplication")
        return a * b

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        if (a.level, a.relinearized) != (b.level, b.relinearized):
            raise ProtocolError(
                f"add needs matching operands, got level {a.level}/{b.level},"
                f" relinearized {a.relinearized}/{b.relinearized}"
            )
        self.ops += 1
        return Ciphertext(a.level, a.relinearized, self._checked_add(a.slots, b.slots))

    def mul(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        if a.level != b.level:
            raise ProtocolError(f"multiply needs equal levels, got {a.level} and {b.level}")
        if a.level == 0:
            raise ProtocolError("a level-0 ciphertext cannot be multiplied")
        if not (a.relinearized and b.relinearized):
            raise ProtocolError("multiply needs relinearized operands")
        self.ops += 1
        return Ciphertext(a.level, False, self._checked_mul(a.slots, b.slots))

    def relin_rescale(self, a: Ciphertext) -> Ciphertext:
        if a.relinearized:
            raise ProtocolError("ciphertext is already relinearized")
        if a.level == 0:
            raise ProtocolError("cannot rescale below level 0")
        self.ops += 1
        return Ciphertext(a.level - 1, True, (a.slots + _HALF) >> SCALE_BITS)

    def add_plain(self, a: Ciphertext, c: int) -> Ciphertext:
        self.ops += 1
        shift = 0 if a.relinearized else SCALE_BITS
        const = np.full(self.dimension, c << shift, dtype=np.int64)
        return Ciphertext(a.level, a.relinearized, self._checked_add(a.slots, const))

    def mul_plain(self, a: Ciphertext, c: int) -> Ciphertext:
        if not a.relinearized:
            raise ProtocolError("plaintext multiply needs a relinearized operand")
        if a.level == 0:
            raise ProtocolError("a level-0 ciphertext cannot be multiplied")
        self.ops += 1
        prod = self._checked_mul(a.slots, np.full(self.dimension, c, dtype=np.int64))
        return Ciphertext(a.level - 1, True, (prod + _HALF) >> SCALE_BITS)


@dataclass
class DriverConfig:
    """Driver configuration block of a run config."""

    wire_bytes: int = 16
    max_level: int = 2
    dimension: int = 4096
    relin_unit: int = 64 * KIB
    unrelin_unit: int = 96 * KIB
    seed: int = 0

    def size_table(self) -> SizeTable:
        return SizeTable(self.relin_unit, self.unrelin_unit)

    def make(self, driver_id: DriverId):
        if driver_id == DriverId.BITWIRE:
            return BitWireDriver(self.wire_bytes, self.seed)
        return LeveledBatchDriver(self.max_level, self.dimension, self.size_table(), self.seed)

    def unit_bytes(self, driver_id: DriverId) -> int:
        return self.wire_bytes if driver_id == DriverId.BITWIRE else 1
