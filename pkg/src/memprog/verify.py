"""Replay checker for memory programs.

Walks a virtual program and the memory program planned from it in
lockstep, tracking which (page, version) every frame and storage frame
holds.  A plan is sound when every read finds the latest version of its
page in the frame the memory program names, and it respects its budget
when protocol operands only use the ``T`` main frames and directives
stay within ``T + B``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .bytecode import DIRECTIVES, Dialect, OpCode, memory_operands, read_program


class VerificationError(Exception):
    pass


@dataclass
class ReplayReport:
    frames: int
    prefetch_frames: int
    instructions: int = 0
    directives: int = 0
    max_main_frame: int = -1
    max_frame: int = -1
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def within_budget(self) -> bool:
        return self.max_main_frame < self.frames and self.max_frame < self.frames + self.prefetch_frames


_SKIP = DIRECTIVES - {OpCode.NetworkPostSend, OpCode.NetworkPostReceive}


def replay(virtual_path: str | os.PathLike, physical_path: str | os.PathLike,
           max_errors: int = 10) -> ReplayReport:
    vh, vinsts = read_program(virtual_path)
    ph, pinsts = read_program(physical_path)
    if vh.dialect != Dialect.VIRTUAL or ph.dialect != Dialect.PHYSICAL:
        raise VerificationError("replay needs a virtual and a physical program")
    if vh.page_shift != ph.page_shift:
        raise VerificationError("page sizes differ")
    shift = ph.page_shift
    mask = (1 << shift) - 1
    T, B = ph.frame_count, ph.prefetch_frames
    rep = ReplayReport(T, B)

    version: dict[int, int] = {}
    frame: dict[int, tuple[int, int]] = {}
    store: dict[int, tuple[int, int]] = {}
    inflight: dict[int, int] = {}  # frame -> storage frame being read into it

    def err(msg: str) -> None:
        if len(rep.errors) < max_errors:
            rep.errors.append(msg)

    def use_frame(f: int, main: bool) -> None:
        rep.max_frame = max(rep.max_frame, f)
        if main:
            rep.max_main_frame = max(rep.max_main_frame, f)
        if f >= T + B or (main and f >= T):
            err(f"frame {f} outside budget T={T}, B={B}")

    pit = iter(pinsts)
    for vi, vinst in enumerate(vinsts):
        # consume directives that precede the matching instruction
        while True:
            pinst = next(pit, None)
            if pinst is None:
                raise VerificationError(f"memory program ends before virtual instruction {vi}")
            op = pinst.opcode
            if op not in _SKIP:
                break
            if op == OpCode.NetworkBarrier and vinst.opcode == OpCode.NetworkBarrier:
                break
            rep.directives += 1
            if op == OpCode.IssueSwapIn:
                use_frame(pinst.output, False)
                if pinst.immediate not in store:
                    err(f"virtual {vi}: swap-in from empty storage frame {pinst.immediate}")
                inflight[pinst.output] = pinst.immediate
            elif op == OpCode.FinishSwapIn:
                s = inflight.pop(pinst.output, None)
                if s is None:
                    err(f"virtual {vi}: finish without issue on frame {pinst.output}")
                elif s in store:
                    frame[pinst.output] = store[s]
            elif op == OpCode.IssueSwapOut:
                use_frame(pinst.output, False)
                if pinst.output in frame:
                    store[pinst.immediate] = frame[pinst.output]
            elif op in (OpCode.CopyFromPrefetch, OpCode.CopyToPrefetch):
                use_frame(pinst.output, False)
                use_frame(pinst.inputs[0], False)
                src = frame.get(pinst.inputs[0])
                if src is None:
                    frame.pop(pinst.output, None)
                else:
                    frame[pinst.output] = src
        if (pinst.opcode, pinst.width, pinst.immediate) != (vinst.opcode, vinst.width, vinst.immediate):
            raise VerificationError(
                f"virtual {vi} ({vinst.opcode.name}) does not match memory-program {pinst.opcode.name}"
            )
        rep.instructions += 1
        vops, pops = memory_operands(vinst), memory_operands(pinst)
        for (va, write), (pa, _) in zip(vops, pops):
            if va & mask != pa & mask:
                err(f"virtual {vi}: page offset changed ({va:#x} -> {pa:#x})")
            page, f = va >> shift, pa >> shift
            use_frame(f, True)
            if not write:
                want = (page, version.get(page, 0))
                if frame.get(f) != want:
                    err(f"virtual {vi}: reads page {page} v{want[1]} but frame {f} holds {frame.get(f)}")
        for (va, write), (pa, _) in zip(vops, pops):
            if write:
                page, f = va >> shift, pa >> shift
                cur = version.get(page, 0)
                if cur and frame.get(f, (None,))[0] != page:
                    err(f"virtual {vi}: writes page {page} into frame {f} that does not hold it")
                version[page] = cur + 1
                frame[f] = (page, cur + 1)
    for pinst in pit:
        if pinst.opcode not in _SKIP:
            err(f"memory program has extra instruction {pinst.opcode.name}")
            break
    return rep
