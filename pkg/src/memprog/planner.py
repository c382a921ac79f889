"""The planning pipeline: placement -> replacement -> scheduling.

Each stage streams one program file into the next, so planning memory is
bounded by the stages' own state rather than by program length.  The
intermediate files sit next to the output and are removed afterwards
unless ``keep_intermediates`` is set.
"""

from __future__ import annotations

import gc
import os
import time
import tracemalloc
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .bytecode import ProgramWriter, read_header
from .dsl import BuilderError, ProgramBuilder, ProgramOptions
from .placement import AllocatorStats
from .replacement import (
    PlanStats, annotate_next_use, plan_replacement, plan_replacement_baseline,
)
from .scheduling import SchedulerConfig, schedule

ProgramFn = Callable[[ProgramOptions], None]


@dataclass
class PlacementResult:
    path: Path
    instructions: int
    allocator: AllocatorStats


def run_placement(program: ProgramFn, options: ProgramOptions,
                  out_path: str | os.PathLike) -> PlacementResult:
    """Run a builder function and stream its virtual program to ``out_path``."""
    out_path = Path(out_path)
    with ProgramWriter(out_path, options.header()) as w:
        builder = ProgramBuilder(w, options)
        with builder:
            try:
                program(options)
            except BuilderError as exc:
                raise BuilderError(f"after instruction {builder.emitted}: {exc}") from exc
            # handles caught in reference cycles are released here
            gc.collect()
            leaked = builder.allocator.stats.live_allocations
            if leaked:
                raise BuilderError(f"{leaked} allocations still live at the end of the build")
    return PlacementResult(out_path, w.count, builder.allocator.stats)


@dataclass
class PlanResult:
    program: Path
    placement: PlacementResult
    replacement: PlanStats
    scheduling: dict
    plan_time: float
    planner_peak_bytes: int | None = None
    intermediates: dict[str, Path] = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return self.replacement.frames

    def as_dict(self) -> dict:
        header = read_header(self.program)
        return {
            "program": str(self.program),
            "virtual_instructions": self.placement.instructions,
            "physical_instructions": header.instruction_count,
            "frames": header.frame_count,
            "prefetch_frames": header.prefetch_frames,
            "storage_frames": header.storage_frame_count,
            "placement": self.placement.allocator.as_dict(),
            "replacement": self.replacement.as_dict(),
            "scheduling": self.scheduling,
            "plan_time": self.plan_time,
            "planner_peak_bytes": self.planner_peak_bytes,
        }


def plan(program: ProgramFn, options: ProgramOptions, out_path: str | os.PathLike,
         frames: int | None = None, lookahead: int = 0, prefetch_frames: int = 0,
         policy: str = "min", keep_intermediates: bool = False,
         measure_memory: bool = False) -> PlanResult:
    """Plan ``program`` into a memory program with ``frames`` main frames.

    ``frames=None`` plans with unbounded memory: every page gets its own
    frame and no swap directives are emitted.  ``policy`` other than
    ``"min"`` produces a demand-paging baseline and ignores prefetching.
    """
    out_path = Path(out_path)
    stem = out_path.with_suffix("")
    paths = {
        "virtual": Path(f"{stem}.virtual.mpg"),
        "annotations": Path(f"{stem}.nextuse"),
        "physical": Path(f"{stem}.physical.mpg"),
    }
    if measure_memory:
        tracemalloc.start()
    t0 = time.perf_counter()
    try:
        placed = run_placement(program, options, paths["virtual"])
        annotate_next_use(paths["virtual"], paths["annotations"])
        if policy == "min":
            rstats = plan_replacement(paths["virtual"], paths["annotations"], paths["physical"], frames)
            cfg = SchedulerConfig(lookahead if prefetch_frames else 0, prefetch_frames)
        else:
            if frames is None:
                raise ValueError("demand-paging baselines need a frame budget")
            rstats = plan_replacement_baseline(paths["virtual"], paths["annotations"],
                                               paths["physical"], frames, policy)
            cfg = SchedulerConfig(0, 0)
        sched = schedule(paths["physical"], out_path, cfg)
        elapsed = time.perf_counter() - t0
        peak = tracemalloc.get_traced_memory()[1] if measure_memory else None
    finally:
        if measure_memory:
            tracemalloc.stop()
        if not keep_intermediates:
            for p in paths.values():
                p.unlink(missing_ok=True)
    return PlanResult(out_path, placed, rstats, sched, elapsed, peak,
                      paths if keep_intermediates else {})


def footprint(program: ProgramFn, options: ProgramOptions, workdir: str | os.PathLike) -> int:
    """Peak number of simultaneously live pages (the unbounded plan's frame count)."""
    out = Path(workdir) / "footprint.mpg"
    try:
        return plan(program, options, out).frames
    finally:
        out.unlink(missing_ok=True)
