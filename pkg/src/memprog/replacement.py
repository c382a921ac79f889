"""Replacement: translate MAGE-virtual pages to physical frames.

Two streaming passes over a virtual program:

1. ``annotate_next_use`` walks the program backwards and records, for every
   page an instruction touches, the index of the next instruction that
   touches the same page.
2. ``plan_replacement`` walks forwards with Belady's MIN policy, rewriting
   addresses to physical frames and inserting synchronous swap directives
   (an Issue immediately followed by its Finish).  The scheduling stage
   later turns those into asynchronous prefetches.

``plan_replacement_baseline`` runs the same machinery under LRU or FIFO
eviction with demand swap-ins; ``brute_force_min`` is an exhaustive oracle
for tiny traces.
"""

from __future__ import annotations

import heapq
import json
import os
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

from .bytecode import (
    NETWORK_OPS, Dialect, Instruction, OpCode, ProgramHeader, ProgramWriter,
    memory_operands, read_program, read_program_reversed,
)

INF = (1 << 63) - 1

_ANN_MAGIC = b"MNU1"
_ANN_HEADER = struct.Struct("<4sQ")
_CHUNK = 8192


class ReplacementError(Exception):
    pass


class InfeasiblePlanError(ReplacementError):
    pass


# --- next-use annotation -----------------------------------------------------


def instruction_pages(inst: Instruction, page_shift: int) -> list[tuple[int, bool]]:
    """Distinct (page, written) pairs in operand order (output first)."""
    seen: dict[int, bool] = {}
    for addr, write in memory_operands(inst):
        p = addr >> page_shift
        seen[p] = seen.get(p, False) or write
    return list(seen.items())


def next_use_trace(pages: Sequence[int]) -> list[int]:
    """Next-use index for each access of a single-page-per-step trace."""
    out = [INF] * len(pages)
    last: dict[int, int] = {}
    for i in range(len(pages) - 1, -1, -1):
        out[i] = last.get(pages[i], INF)
        last[pages[i]] = i
    return out


def annotate_next_use(virtual_path: str | os.PathLike, out_path: str | os.PathLike) -> int:
    """Backward pass; writes one int64 next-use value per (instruction, page).

    Values are stored in reverse program order so the forward pass can
    consume the file back to front.  Returns the number of values written.
    """
    header, rev = read_program_reversed(virtual_path)
    if header.dialect != Dialect.VIRTUAL:
        raise ReplacementError("next-use annotation needs a virtual program")
    shift = header.page_shift
    last: dict[int, int] = {}
    count = 0
    buf: list[int] = []
    with open(out_path, "wb") as fh:
        fh.write(_ANN_HEADER.pack(_ANN_MAGIC, 0))
        for i, inst in rev:
            pages = instruction_pages(inst, shift)
            for p, _ in reversed(pages):
                buf.append(last.get(p, INF))
            for p, _ in pages:
                last[p] = i
            if len(buf) >= _CHUNK:
                fh.write(struct.pack(f"<{len(buf)}q", *buf))
                count += len(buf)
                buf.clear()
        if buf:
            fh.write(struct.pack(f"<{len(buf)}q", *buf))
            count += len(buf)
        fh.seek(0)
        fh.write(_ANN_HEADER.pack(_ANN_MAGIC, count))
    return count


def read_annotations(path: str | os.PathLike) -> Iterator[int]:
    """Next-use values in forward program order."""
    with open(path, "rb") as fh:
        magic, count = _ANN_HEADER.unpack(fh.read(_ANN_HEADER.size))
        if magic != _ANN_MAGIC:
            raise ReplacementError(f"{path}: not a next-use annotation file")
        end = count
        while end > 0:
            start = max(0, end - _CHUNK)
            fh.seek(_ANN_HEADER.size + 8 * start)
            vals = struct.unpack(f"<{end - start}q", fh.read(8 * (end - start)))
            yield from reversed(vals)
            end = start


# --- the page planner --------------------------------------------------------

SwapOut = tuple  # ("out", frame, storage_frame)


@dataclass
class PlanStats:
    policy: str = "min"
    frames: int = 0
    swap_ins: int = 0
    swap_outs: int = 0
    barriers_inserted: int = 0
    peak_resident: int = 0
    storage_frames: int = 0
    instructions: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


class PagePlanner:
    """Forward-pass page table with a pluggable eviction policy.

    ``frames=None`` means unbounded: frames are added as needed and the
    final count is the program's peak number of live pages.
    """

    def __init__(self, frames: int | None, policy: str = "min", prematerialized: bool = False):
        if policy not in ("min", "lru", "fifo"):
            raise ValueError(f"unknown policy {policy!r}")
        if frames is not None and frames < 1:
            raise InfeasiblePlanError("at least one frame is required")
        self.capacity = frames
        self.policy = policy
        self.prematerialized = prematerialized
        self.frame_of: dict[int, int] = {}
        self.dirty: set[int] = set()
        self.dead: set[int] = set()  # dead but pinned by pending network I/O
        self.storage_of: dict[int, int] = {}
        self.seen: set[int] = set()
        self.pending_net: set[int] = set()
        self._key: dict[int, tuple] = {}
        self._heap: list[tuple] = []
        self._free_frames: list[int] = []
        self._frames_used = 0
        self._free_storage: list[int] = []
        self._storage_used = 0
        self._seq = 0
        self.stats = PlanStats(policy=policy)

    # -- frames and storage
    def _take_frame(self, current: set[int], out: list[tuple]) -> int:
        if self._free_frames:
            return heapq.heappop(self._free_frames)
        if self.capacity is None or self._frames_used < self.capacity:
            self._frames_used += 1
            return self._frames_used - 1
        victim = self._pick_victim(current)
        return self._evict(victim, out)

    def _alloc_storage(self) -> int:
        if self._free_storage:
            return heapq.heappop(self._free_storage)
        self._storage_used += 1
        return self._storage_used - 1

    def _release_storage(self, page: int) -> None:
        s = self.storage_of.pop(page, None)
        if s is not None:
            heapq.heappush(self._free_storage, s)

    # -- policy bookkeeping
    def _set_key(self, page: int, key: tuple) -> None:
        self._key[page] = key
        heapq.heappush(self._heap, (key, page))
        if len(self._heap) > 4 * len(self._key) + 64:
            self._heap = [(k, p) for p, k in self._key.items()]
            heapq.heapify(self._heap)

    def _min_key(self, page: int, next_use: int) -> tuple:
        # farthest next use first; then clean before dirty; then highest page
        clean_first = 0 if (page in self.dead or page not in self.dirty) else 1
        return (-next_use, clean_first, -page)

    def _pick_victim(self, current: set[int]) -> int:
        skipped = []
        victim = None
        heap = self._heap
        while heap:
            key, page = heapq.heappop(heap)
            if self._key.get(page) != key:
                continue
            if page in current:
                skipped.append((key, page))
                continue
            victim = page
            break
        for item in skipped:
            heapq.heappush(heap, item)
        if victim is None:
            raise InfeasiblePlanError(
                f"{self.capacity} frames cannot hold the {len(current)} pages one instruction touches"
            )
        return victim

    def _evict(self, page: int, out: list[tuple]) -> int:
        if page in self.pending_net:
            out.append(("barrier",))
            self.stats.barriers_inserted += 1
            self.barrier()
            if page not in self.frame_of:
                # the victim was dead; the barrier released its frame
                return heapq.heappop(self._free_frames)
        frame = self.frame_of.pop(page)
        self._key.pop(page, None)
        if page in self.dead:
            self.dead.discard(page)
            self.dirty.discard(page)
            self._release_storage(page)
        elif page in self.dirty:
            s = self.storage_of.get(page)
            if s is None:
                s = self.storage_of[page] = self._alloc_storage()
            out.append(("out", frame, s))
            self.stats.swap_outs += 1
            self.dirty.discard(page)
        return frame

    def _drop(self, page: int) -> None:
        frame = self.frame_of.pop(page)
        self._key.pop(page, None)
        self.dirty.discard(page)
        self.dead.discard(page)
        self._release_storage(page)
        heapq.heappush(self._free_frames, frame)

    # -- public API
    def access(self, index: int, pages: Sequence[tuple[int, bool]], next_uses: Sequence[int],
               network: bool = False) -> tuple[list[tuple], list[int]]:
        """Make ``pages`` resident for instruction ``index``.

        Returns the directives to emit before the instruction and the frame
        assigned to each page.
        """
        out: list[tuple] = []
        current = {p for p, _ in pages}
        frames = []
        for page, write in pages:
            frame = self.frame_of.get(page)
            if frame is None:
                frame = self._take_frame(current, out)
                if page in self.storage_of or (self.prematerialized and page not in self.seen):
                    if page not in self.storage_of:
                        self.storage_of[page] = self._alloc_storage()
                    out.append(("in", frame, self.storage_of[page]))
                    self.stats.swap_ins += 1
                elif page in self.seen:
                    raise ReplacementError(f"page {page} lost its contents")
                elif not write:
                    raise ReplacementError(
                        f"instruction {index} reads page {page} before anything was written to it"
                    )
                self.frame_of[page] = frame
                if self.policy == "fifo":
                    self._seq += 1
                    self._set_key(page, (self._seq,))
            self.seen.add(page)
            frames.append(frame)
        st = self.stats
        st.instructions += 1
        st.peak_resident = max(st.peak_resident, len(self.frame_of))

        for (page, write), nu in zip(pages, next_uses):
            if write:
                self.dirty.add(page)
            if network:
                self.pending_net.add(page)
            # a demand pager has no liveness information and keeps dead pages
            if nu == INF and self.policy == "min":
                if page in self.pending_net:
                    self.dead.add(page)
                    self._set_key(page, self._min_key(page, INF))
                else:
                    self._drop(page)
                continue
            if self.policy == "min":
                self._set_key(page, self._min_key(page, nu))
            elif self.policy == "lru":
                self._seq += 1
                self._set_key(page, (self._seq,))
        return out, frames

    def barrier(self) -> None:
        self.pending_net.clear()
        for page in list(self.dead):
            self._drop(page)

    @property
    def frames_used(self) -> int:
        return self._frames_used

    @property
    def storage_frames(self) -> int:
        return self._storage_used

    def finish(self) -> PlanStats:
        self.stats.frames = self.capacity if self.capacity is not None else self._frames_used
        self.stats.storage_frames = self._storage_used
        return self.stats


def _normalize_trace(trace: Iterable) -> list[tuple[int, bool]]:
    out = []
    for a in trace:
        if isinstance(a, tuple):
            out.append((int(a[0]), bool(a[1])))
        else:
            out.append((int(a), False))
    return out


def simulate_trace(trace: Iterable, frames: int, policy: str = "min",
                   prematerialized: bool = True) -> PlanStats:
    """Plan a one-page-per-step trace of ``page`` or ``(page, is_write)`` items."""
    steps = _normalize_trace(trace)
    nexts = next_use_trace([p for p, _ in steps])
    planner = PagePlanner(frames, policy, prematerialized)
    for i, ((p, w), nu) in enumerate(zip(steps, nexts)):
        planner.access(i, [(p, w)], [nu])
    return planner.finish()


# --- program-level planning --------------------------------------------------


def _directive_instructions(d: tuple) -> list[Instruction]:
    kind = d[0]
    if kind == "in":
        return [Instruction(OpCode.IssueSwapIn, 0, d[1], (), d[2]),
                Instruction(OpCode.FinishSwapIn, 0, d[1], (), d[2])]
    if kind == "out":
        return [Instruction(OpCode.IssueSwapOut, 0, d[1], (), d[2]),
                Instruction(OpCode.FinishSwapOut, 0, d[1], (), d[2])]
    return [Instruction(OpCode.NetworkBarrier, 0)]


def _plan(virtual_path, annotation_path, out_path, frames, policy) -> PlanStats:
    header, insts = read_program(virtual_path)
    if header.dialect != Dialect.VIRTUAL:
        raise ReplacementError("replacement needs a virtual program")
    shift = header.page_shift
    mask = (1 << shift) - 1
    planner = PagePlanner(frames, policy)
    nexts = read_annotations(annotation_path)
    phys = ProgramHeader(Dialect.PHYSICAL, header.address_unit, shift, header.driver_id)

    with ProgramWriter(out_path, phys) as w:
        for i, inst in enumerate(insts):
            op = inst.opcode
            if op == OpCode.NetworkBarrier:
                planner.barrier()
                w.append(inst)
                continue
            pages = instruction_pages(inst, shift)
            if not pages:
                w.append(inst)
                continue
            nu = [next(nexts) for _ in pages]
            try:
                directives, frames_ = planner.access(i, pages, nu, network=op in NETWORK_OPS)
            except InfeasiblePlanError as exc:
                raise InfeasiblePlanError(f"instruction {i} ({op.name}): {exc}") from None
            for d in directives:
                w.extend(_directive_instructions(d))
            fmap = {p: f for (p, _), f in zip(pages, frames_)}
            tr = lambda a: (fmap[a >> shift] << shift) | (a & mask)  # noqa: E731
            w.append(inst._replace(
                output=tr(inst.output) if op not in (OpCode.Output, OpCode.NetworkPostSend) else 0,
                inputs=tuple(tr(a) for a in inst.inputs),
            ))
        stats = planner.finish()
        phys.frame_count = stats.frames
        phys.storage_frame_count = stats.storage_frames
    return stats


def plan_replacement(virtual_path, annotation_path, out_path, frames: int | None) -> PlanStats:
    """MIN replacement with ``frames`` physical frames (``None`` = unbounded)."""
    return _plan(virtual_path, annotation_path, out_path, frames, "min")


def plan_replacement_baseline(virtual_path, annotation_path, out_path, frames: int,
                              policy: str = "lru") -> PlanStats:
    """Demand paging under LRU or FIFO; swap-ins happen at the point of use."""
    if policy not in ("lru", "fifo"):
        raise ValueError("baseline policy must be 'lru' or 'fifo'")
    return _plan(virtual_path, annotation_path, out_path, frames, policy)


# --- exhaustive oracle -------------------------------------------------------

MAX_ORACLE_TRACE = 24
MAX_ORACLE_PAGES = 8
MAX_ORACLE_FRAMES = 4


def brute_force_min(trace: Iterable, frames: int) -> tuple[int, int]:
    """Exact (min swap-ins, min swap-ins + dirty swap-outs) by exhaustive search.

    All pages start clean in storage.  A page with no later access is
    dropped for free; evicting a dirty page that is used again costs one
    swap-out.  Exponential by design; refuses instances above the bounds.
    """
    steps = _normalize_trace(trace)
    pages = {p for p, _ in steps}
    if (len(steps) > MAX_ORACLE_TRACE or len(pages) > MAX_ORACLE_PAGES
            or not 1 <= frames <= MAX_ORACLE_FRAMES):
        raise ValueError("instance too large for the exhaustive oracle")
    n = len(steps)
    nexts = next_use_trace([p for p, _ in steps])
    live_after = [frozenset(p for p, _ in steps[i + 1:]) for i in range(n)]

    def solve(count_outs: bool) -> int:
        @lru_cache(maxsize=None)
        def best(i: int, resident: frozenset, dirty: frozenset) -> int:
            if i == n:
                return 0
            page, write = steps[i]
            options = []
            if page in resident:
                options.append((0, resident, dirty))
            elif len(resident) < frames:
                options.append((1, resident | {page}, dirty))
            else:
                for v in resident:
                    cost = 1 + (1 if (count_outs and v in dirty) else 0)
                    options.append((cost, (resident - {v}) | {page}, dirty - {v}))
            results = []
            for cost, res, dty in options:
                if write:
                    dty = dty | {page}
                if nexts[i] == INF:
                    res = res - {page}
                    dty = dty - {page}
                keep = live_after[i]
                res = frozenset(res & keep)
                dty = frozenset(dty & keep)
                results.append(cost + best(i + 1, res, dty))
            return min(results)

        return best(0, frozenset(), frozenset())

    return solve(False), solve(True)
