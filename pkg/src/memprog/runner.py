"""Run one or more workers' memory programs in this process."""

from __future__ import annotations

import io
import os
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

from .bytecode import Dialect, read_header, read_program
from .channels import InProcessNetwork
from .drivers import DriverConfig
from .engine import Engine, ExecStats, TimingModel, _virtual_frames
from .storage import SimulatedStorage, VirtualClock


@dataclass
class SimulatorParams:
    latency: float = 100e-6
    bandwidth: float = 2e9


@dataclass
class WorkerResult:
    output: list[str]
    stats: ExecStats


def _run_one(path, driver_cfg: DriverConfig, inputs: Sequence[str], storage, channel,
             timing: TimingModel | None) -> WorkerResult:
    header, insts = read_program(path)
    frames = _virtual_frames(path, header.page_shift) if header.dialect == Dialect.VIRTUAL else None
    engine = Engine(header, driver_cfg.make(header.driver_id), storage, channel, timing, frames)
    out = io.StringIO()
    stats = engine.run(insts, inputs, out)
    return WorkerResult(out.getvalue().splitlines(), stats)


def simulated_storage_for(path, driver_cfg: DriverConfig, sim: SimulatorParams) -> SimulatedStorage:
    header = read_header(path)
    frame_bytes = header.page_size * driver_cfg.unit_bytes(header.driver_id)
    return SimulatedStorage(frame_bytes, sim.latency, sim.bandwidth, VirtualClock())


def run_workers(programs: Sequence[str | os.PathLike], inputs: Sequence[Sequence[str]],
                driver_cfg: DriverConfig | None = None, sim: SimulatorParams | None = None,
                timing: TimingModel | None = None,
                storage_factory: Callable[[int, str], object] | None = None) -> list[WorkerResult]:
    """Execute worker ``i``'s program with ``inputs[i]``; workers talk over in-process queues.

    Storage defaults to a simulated device per worker.  Any worker's
    failure is re-raised after all threads have stopped.
    """
    driver_cfg = driver_cfg or DriverConfig()
    sim = sim or SimulatorParams()
    W = len(programs)
    if len(inputs) != W:
        raise ValueError(f"{W} programs but {len(inputs)} input lists")
    if storage_factory is None:
        storage_factory = lambda w, p: simulated_storage_for(p, driver_cfg, sim)  # noqa: E731
    storages = [storage_factory(w, programs[w]) for w in range(W)]
    if W == 1:
        try:
            return [_run_one(programs[0], driver_cfg, inputs[0], storages[0], None, timing)]
        finally:
            storages[0].close()
    net = InProcessNetwork(W)
    results: list[WorkerResult | None] = [None] * W
    errors: list[tuple[int, BaseException]] = []

    def work(w: int) -> None:
        try:
            results[w] = _run_one(programs[w], driver_cfg, inputs[w], storages[w],
                                  net.endpoint(w), timing)
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors.append((w, exc))

    threads = [threading.Thread(target=work, args=(w,), name=f"worker-{w}") for w in range(W)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for s in storages:
        s.close()
    if errors:
        w, exc = min(errors, key=lambda e: e[0])
        raise RuntimeError(f"worker {w} failed: {exc}") from exc
    return results
