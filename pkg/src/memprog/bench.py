"""Benchmark harness: workloads x paging scenarios on the simulated device.

Scenarios:

* ``unbounded`` -- as many frames as the program's peak live pages; no swapping.
* ``min_prefetch`` -- MIN replacement plus prefetching, with memory limited
  to ``memory_fraction`` of the footprint (``T + B`` frames in total).
* ``demand_lru`` / ``demand_fifo`` -- demand paging under LRU / FIFO with
  the same memory limit, every swap synchronous.  These stand in for
  operating-system swapping, which cannot be reproduced in-process.

Times are virtual; every ratio is normalized by the unbounded scenario of
the same workload.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bytecode import DriverId
from .drivers import DriverConfig
from .engine import TimingModel
from .planner import plan
from .runner import SimulatorParams, run_workers
from .scheduling import little_law_buffer
from .workloads import ALL_WORKLOADS, WorkloadSpec, build_workload, generate_inputs, tile_size

SCENARIOS = ("unbounded", "min_prefetch", "demand_lru", "demand_fifo")


@dataclass
class Calibration:
    """Simulator and cost constants for one driver.

    The device moves a page in ``transfer_time = page_bytes / bandwidth``
    and adds ``latency_pages * transfer_time`` of latency; the prefetch
    buffer holds ``buffer_factor`` times the Little's-law requirement plus
    one write-back slot, so bursts of swap-ins do not drain it.
    """

    bandwidth: float
    latency_pages: float
    lookahead: int
    timing: TimingModel
    buffer_factor: int = 2

    def latency(self, page_bytes: int) -> float:
        return self.latency_pages * page_bytes / self.bandwidth

    def prefetch_frames(self, page_bytes: int) -> int:
        return self.buffer_factor * little_law_buffer(self.bandwidth, self.latency(page_bytes), page_bytes) + 1


def default_calibration() -> dict[DriverId, Calibration]:
    return {
        DriverId.BITWIRE: Calibration(
            bandwidth=1e9, latency_pages=4.0, lookahead=2000,
            timing=TimingModel(gate_time=10e-9, batch_op_time=0.0, instruction_time=1e-6),
        ),
        DriverId.BATCH: Calibration(
            bandwidth=1e9, latency_pages=4.0, lookahead=200,
            timing=TimingModel(gate_time=0.0, batch_op_time=10e-6, instruction_time=1e-6),
        ),
    }


# problem size and page size (log2 address units) per workload
DEFAULT_SIZES = {
    "merge": (128, 7), "sort": (256, 7), "ljoin": (32, 7), "mvmul": (16, 5),
    "binfclayer": (16, 4), "rsum": (256, 13), "rstats": (256, 13), "rmvmul": (16, 13),
    "n_rmatmul": (16, 13), "t_rmatmul": (16, 13),
}


def scaled_driver() -> DriverConfig:
    """Small ciphertexts so batch workloads page meaningfully at desk scale."""
    return DriverConfig(dimension=16, relin_unit=1024, unrelin_unit=1536)


@dataclass
class BenchSettings:
    workloads: tuple[str, ...] = ALL_WORKLOADS
    scenarios: tuple[str, ...] = SCENARIOS
    sizes: dict = field(default_factory=lambda: dict(DEFAULT_SIZES))
    seed: int = 0
    memory_fraction: float = 0.25
    driver: DriverConfig = field(default_factory=scaled_driver)
    calibration: dict = field(default_factory=default_calibration)
    measure_memory: bool = True
    params: dict = field(default_factory=dict)

    def describe(self) -> dict:
        return {
            "seed": self.seed,
            "memory_fraction": self.memory_fraction,
            "driver": asdict(self.driver),
            "sizes": {k: {"n": v[0], "page_shift": v[1]} for k, v in self.sizes.items()},
            "calibration": {d.name.lower(): asdict(c) for d, c in self.calibration.items()},
        }


@dataclass
class Cell:
    workload: str
    scenario: str
    correct: bool
    footprint_frames: int
    memory_limit_frames: int
    frames: int
    prefetch_frames: int
    lookahead: int
    page_bytes: int
    latency: float
    bandwidth: float
    plan: dict
    stats: dict
    ratio: float = 1.0

    @property
    def total_virtual_time(self) -> float:
        return self.stats["total_virtual_time"]


def tile_for(spec: WorkloadSpec, T: int, page_bytes: int, driver: DriverConfig) -> int:
    top = driver.max_level
    return tile_size(spec.n, T, page_bytes, driver.size_table().size(top, True),
                     driver.size_table().size(top, False))


def run_workload(name: str, settings: BenchSettings, workdir: str | os.PathLike) -> list[Cell]:
    n, shift = settings.sizes[name]
    driver = settings.driver
    params = dict(settings.params.get(name, {}))
    spec = WorkloadSpec(name, n, params=params)
    cal = settings.calibration[spec.driver_id]
    data = generate_inputs(spec, settings.seed, driver)
    unit = driver.unit_bytes(spec.driver_id)
    page_bytes = (1 << shift) * unit
    latency = cal.latency(page_bytes)
    sim = SimulatorParams(latency, cal.bandwidth)
    workdir = Path(workdir)

    # the footprint (unbounded frame count) determines the memory limit
    probe_spec = spec
    if name == "t_rmatmul" and "tile" not in params:
        probe_spec = WorkloadSpec(name, n, params={**params, "tile": 1})
    opts = probe_spec.options(page_shift=shift, driver=driver)
    base = plan(build_workload(probe_spec), opts, workdir / f"{name}.probe.mpg")
    footprint = base.frames
    limit = max(4, math.ceil(footprint * settings.memory_fraction))
    B = cal.prefetch_frames(page_bytes)
    if limit - B < 4:
        B = max(0, limit - 4)
    T = limit - B
    if name == "t_rmatmul" and "tile" not in params:
        params["tile"] = tile_for(spec, T, page_bytes, driver)
        spec = WorkloadSpec(name, n, params=params)
    opts = spec.options(page_shift=shift, driver=driver)
    program = build_workload(spec)

    cells = []
    for scenario in settings.scenarios:
        out = workdir / f"{name}.{scenario}.mpg"
        if scenario == "unbounded":
            res = plan(program, opts, out, measure_memory=settings.measure_memory)
            frames, b, la = res.frames, 0, 0
        elif scenario == "min_prefetch":
            res = plan(program, opts, out, frames=T, lookahead=cal.lookahead, prefetch_frames=B,
                       measure_memory=settings.measure_memory)
            frames, b, la = T, B, cal.lookahead
        else:
            policy = scenario.split("_", 1)[1]
            res = plan(program, opts, out, frames=limit, policy=policy,
                       measure_memory=settings.measure_memory)
            frames, b, la = limit, 0, 0
        run = run_workers([res.program], data.inputs, driver, sim, cal.timing)[0]
        plan_info = res.as_dict()
        plan_info.pop("program", None)
        cells.append(Cell(name, scenario, run.output == data.expected, footprint, limit, frames, b,
                          la, page_bytes, latency, cal.bandwidth, plan_info, run.stats.as_dict()))
        out.unlink(missing_ok=True)
    ref = next((c for c in cells if c.scenario == "unbounded"), None)
    if ref is not None:
        for c in cells:
            c.ratio = c.total_virtual_time / ref.total_virtual_time
    return cells


@dataclass
class BenchReport:
    settings: dict
    cells: list[Cell]

    def cell(self, workload: str, scenario: str) -> Cell:
        for c in self.cells:
            if c.workload == workload and c.scenario == scenario:
                return c
        raise KeyError((workload, scenario))

    def as_dict(self) -> dict:
        return {
            "settings": self.settings,
            "baseline_note": "demand_lru/demand_fifo stand in for OS swapping",
            "cells": [asdict(c) for c in self.cells],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def write_csv(self, path: str | os.PathLike) -> None:
        scenarios = [s for s in SCENARIOS if any(c.scenario == s for c in self.cells)]
        workloads = list(dict.fromkeys(c.workload for c in self.cells))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["workload", *scenarios])
            for name in workloads:
                w.writerow([name, *(f"{self.cell(name, s).ratio:.6f}" for s in scenarios)])

    def write_gnuplot(self, path: str | os.PathLike, csv_name: str) -> None:
        scenarios = [s for s in SCENARIOS if any(c.scenario == s for c in self.cells)]
        cols = ", ".join(
            f"'{csv_name}' using {i + 2}:xtic(1) title '{s}'" if i == 0 else f"'' using {i + 2} title '{s}'"
            for i, s in enumerate(scenarios)
        )
        Path(path).write_text(
            "set datafile separator ','\n"
            "set style data histograms\n"
            "set style histogram cluster gap 1\n"
            "set style fill solid border -1\n"
            "set ylabel 'time normalized to unbounded'\n"
            "set key top left\n"
            "set xtics rotate by -30\n"
            "set terminal pngcairo size 1000,500\n"
            "set output 'ratios.png'\n"
            f"plot {cols}\n"
        )

    def write(self, out_dir: str | os.PathLike) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.json", "csv": out / "ratios.csv", "gnuplot": out / "ratios.gp"}
        paths["report"].write_text(self.to_json())
        self.write_csv(paths["csv"])
        self.write_gnuplot(paths["gnuplot"], "ratios.csv")
        return paths


def run_bench(settings: BenchSettings | None = None, workdir: str | os.PathLike | None = None,
              jobs: int = 1) -> BenchReport:
    """Run every workload x scenario cell; ``jobs > 1`` runs workloads in parallel processes.

    Times are virtual, so the report does not depend on ``jobs`` (except
    for the wall-clock plan times it records).
    """
    settings = settings or BenchSettings()
    cells: list[Cell] = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(run_workload, name, settings, tmp) for name in settings.workloads]
                for fut in futures:
                    cells.extend(fut.result())
        else:
            for name in settings.workloads:
                cells.extend(run_workload(name, settings, tmp))
    return BenchReport(settings.describe(), cells)
