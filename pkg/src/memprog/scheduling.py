"""Scheduling: turn synchronous swaps into asynchronous, prefetched transfers.

Replacement emits each swap as an Issue immediately followed by its
Finish.  This pass moves every swap-in up to ``lookahead`` instructions
earlier, landing the data in one of ``prefetch_frames`` extra frames (the
prefetch buffer) and copying it into place just before use.  Swap-outs
are copied into a prefetch slot and written back in the background; the
matching Finish is only emitted when a slot is needed and none is free,
oldest write first.
"""

from __future__ import annotations

import math
import os
from collections import deque
from dataclasses import dataclass

from .bytecode import (
    SWAP_DIRECTIVES, Dialect, Instruction, OpCode, ProgramWriter, read_program,
)


class SchedulingError(Exception):
    pass


@dataclass(frozen=True)
class SchedulerConfig:
    lookahead: int
    prefetch_frames: int

    def __post_init__(self) -> None:
        if self.lookahead < 0:
            raise SchedulingError("lookahead must be non-negative")
        if self.prefetch_frames < 0:
            raise SchedulingError("prefetch_frames must be non-negative")
        if self.lookahead > 0 and self.prefetch_frames == 0:
            raise SchedulingError("a positive lookahead needs at least one prefetch frame")


def little_law_buffer(bandwidth: float, latency: float, page_bytes: int) -> int:
    """Prefetch frames needed to keep ``bandwidth * latency`` bytes in flight."""
    if bandwidth < 0 or latency < 0 or page_bytes <= 0:
        raise ValueError("bandwidth and latency must be non-negative, page size positive")
    return max(0, math.ceil(bandwidth * latency / page_bytes - 1e-9))


class _SwapIn:
    __slots__ = ("frame", "storage", "due", "dep", "slot")

    def __init__(self, frame: int, storage: int, due: int, dep: "_SwapOut | None"):
        self.frame = frame
        self.storage = storage
        self.due = due
        self.dep = dep
        self.slot: int | None = None


class _SwapOut:
    __slots__ = ("frame", "storage", "emitted", "slot", "finished")

    def __init__(self, frame: int, storage: int):
        self.frame = frame
        self.storage = storage
        self.emitted = False
        self.slot: int | None = None
        self.finished = False


def _events(insts):
    """Group Issue/Finish pairs from replacement into swap events."""
    it = iter(insts)
    for inst in it:
        op = inst.opcode
        if op in (OpCode.IssueSwapIn, OpCode.IssueSwapOut):
            fin = next(it, None)
            want = OpCode.FinishSwapIn if op == OpCode.IssueSwapIn else OpCode.FinishSwapOut
            if fin is None or fin.opcode != want or fin.output != inst.output:
                raise SchedulingError("expected synchronous swap pairs from replacement")
            yield ("in" if op == OpCode.IssueSwapIn else "out", inst.output, inst.immediate)
        elif op in SWAP_DIRECTIVES:
            raise SchedulingError(f"program is already scheduled ({op.name} found)")
        else:
            yield inst


class _Scheduler:
    def __init__(self, insts, writer: ProgramWriter, frames: int, cfg: SchedulerConfig):
        self.src = _events(insts)
        self.w = writer
        self.cfg = cfg
        self.base = frames
        self.free_slots = list(range(cfg.prefetch_frames))
        self.inbound = 0
        self.outbound: deque[_SwapOut] = deque()
        self.window: deque = deque()
        self.pending_in: deque[_SwapIn] = deque()
        self.last_write: dict[int, _SwapOut] = {}
        self.read = 0  # non-swap instructions read
        self.done = 0  # non-swap instructions emitted
        self.exhausted = False

    # -- reading ahead
    def _fill(self) -> None:
        horizon = self.done + self.cfg.lookahead
        while not self.exhausted and self.read <= horizon:
            ev = next(self.src, None)
            if ev is None:
                self.exhausted = True
                break
            if not isinstance(ev, Instruction):
                kind, frame, storage = ev
                if kind == "in":
                    ev = _SwapIn(frame, storage, self.read, self.last_write.get(storage))
                    self.pending_in.append(ev)
                else:
                    ev = _SwapOut(frame, storage)
                    self.last_write[storage] = ev
            else:
                self.read += 1
            self.window.append(ev)

    # -- prefetch buffer
    def _slot_frame(self, slot: int) -> int:
        return self.base + slot

    def _finish_out(self, so: _SwapOut) -> None:
        f = self._slot_frame(so.slot)
        self.w.append(Instruction(OpCode.FinishSwapOut, 0, f, (), so.storage))
        so.finished = True
        self.outbound.remove(so)
        self.free_slots.append(so.slot)
        self.free_slots.sort()

    def _alloc_slot(self) -> int | None:
        if not self.free_slots and self.outbound:
            self._finish_out(self.outbound[0])
        if not self.free_slots:
            return None
        return self.free_slots.pop(0)

    def _issue(self, si: _SwapIn, slot: int) -> None:
        si.slot = slot
        self.inbound += 1
        self.w.append(Instruction(OpCode.IssueSwapIn, 0, self._slot_frame(slot), (), si.storage))

    def _ready(self, si: _SwapIn) -> bool:
        dep = si.dep
        if dep is None:
            return True
        if not dep.emitted:
            return False
        if dep.slot is not None and not dep.finished:
            # the write-back must land before the page is read back
            self._finish_out(dep)
        return True

    def _prefetch(self) -> None:
        horizon = self.done + self.cfg.lookahead
        B = self.cfg.prefetch_frames
        while self.pending_in:
            si = self.pending_in[0]
            if si.due > horizon:
                break
            # leave half the buffer for write-backs in flight
            if B >= 2 and self.inbound >= (B + 1) // 2:
                break
            if not self._ready(si):
                break
            slot = self._alloc_slot()
            if slot is None:
                break
            self._issue(si, slot)
            self.pending_in.popleft()

    # -- emission
    def _emit(self, ev) -> None:
        w = self.w
        if isinstance(ev, _SwapIn):
            if ev.slot is None:
                if not self.pending_in or self.pending_in[0] is not ev:
                    raise SchedulingError("swap-in issued out of order")
                self._ready(ev)
                slot = self._alloc_slot()
                if slot is None:
                    raise SchedulingError("prefetch buffer exhausted by inbound transfers")
                self._issue(ev, slot)
                self.pending_in.popleft()
            f = self._slot_frame(ev.slot)
            w.append(Instruction(OpCode.FinishSwapIn, 0, f, (), ev.storage))
            w.append(Instruction(OpCode.CopyFromPrefetch, 0, ev.frame, (f,), 0))
            self.inbound -= 1
            self.free_slots.append(ev.slot)
            self.free_slots.sort()
        elif isinstance(ev, _SwapOut):
            older = [o for o in self.outbound if o.storage == ev.storage]
            for o in older:
                self._finish_out(o)
            slot = self._alloc_slot()
            if slot is None:
                # every slot holds an inbound page: write back synchronously
                w.append(Instruction(OpCode.IssueSwapOut, 0, ev.frame, (), ev.storage))
                w.append(Instruction(OpCode.FinishSwapOut, 0, ev.frame, (), ev.storage))
                ev.finished = True
            else:
                ev.slot = slot
                f = self._slot_frame(slot)
                w.append(Instruction(OpCode.CopyToPrefetch, 0, f, (ev.frame,), 0))
                w.append(Instruction(OpCode.IssueSwapOut, 0, f, (), ev.storage))
                self.outbound.append(ev)
            ev.emitted = True
        else:
            w.append(ev)
            self.done += 1

    def run(self) -> None:
        while True:
            self._fill()
            if not self.window:
                break
            self._prefetch()
            self._emit(self.window.popleft())
        while self.outbound:
            self._finish_out(self.outbound[0])


def schedule(in_path: str | os.PathLike, out_path: str | os.PathLike, cfg: SchedulerConfig) -> dict:
    """Rewrite a replacement-stage program into the final memory program."""
    header, insts = read_program(in_path)
    if header.dialect != Dialect.PHYSICAL or header.prefetch_frames:
        raise SchedulingError("scheduling needs an unscheduled physical program")
    out_header = header.__class__(**{**header.__dict__})
    out_header.prefetch_frames = cfg.prefetch_frames
    with ProgramWriter(out_path, out_header) as w:
        if cfg.prefetch_frames == 0:
            w.extend(insts)
        else:
            _Scheduler(insts, w, header.frame_count, cfg).run()
    return {"instructions": out_header.instruction_count, "lookahead": cfg.lookahead,
            "prefetch_frames": cfg.prefetch_frames}
