"""The ten benchmark workloads, their input generators and plaintext oracles.

>>> spec = WorkloadSpec("merge", n=2)
>>> spec.driver_id.name
'BITWIRE'
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from ..bytecode import DriverId
from ..drivers import DriverConfig
from ..dsl import ProgramOptions
from . import batch, bitwire
from .batch import tile_size
from .oracles import ORACLES

BIT_WORKLOADS = ("merge", "sort", "ljoin", "mvmul", "binfclayer")
BATCH_WORKLOADS = ("rsum", "rstats", "rmvmul", "n_rmatmul", "t_rmatmul")
ALL_WORKLOADS = BIT_WORKLOADS + BATCH_WORKLOADS
DISTRIBUTED_WORKLOADS = ("merge", "sort", "rsum", "rstats")

_PROGRAMS: dict[str, Callable] = {
    "merge": bitwire.merge,
    "sort": bitwire.sort,
    "ljoin": bitwire.ljoin,
    "mvmul": bitwire.mvmul,
    "binfclayer": bitwire.binfclayer,
    "rsum": batch.rsum,
    "rstats": batch.rstats,
    "rmvmul": batch.rmvmul,
    "n_rmatmul": batch.n_rmatmul,
    "t_rmatmul": batch.t_rmatmul,
}


class WorkloadSpecError(ValueError):
    pass


def _pow2(x: int) -> bool:
    return x >= 1 and x & (x - 1) == 0


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    n: int
    worker_count: int = 1
    params: dict = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self) -> None:
        if self.name not in _PROGRAMS:
            raise WorkloadSpecError(f"unknown workload {self.name!r}; choose from {', '.join(ALL_WORKLOADS)}")
        if not _pow2(self.n):
            raise WorkloadSpecError(f"n must be a power of two, got {self.n}")
        if not _pow2(self.worker_count):
            raise WorkloadSpecError(f"worker_count must be a power of two, got {self.worker_count}")
        if self.worker_count > 1:
            if self.name not in DISTRIBUTED_WORKLOADS:
                raise WorkloadSpecError(f"{self.name} has no distributed variant")
            total = 2 * self.n if self.name == "merge" else self.n
            if total < self.worker_count or (self.name == "merge" and self.worker_count > 2 * self.n):
                raise WorkloadSpecError(f"n={self.n} is too small for {self.worker_count} workers")

    @property
    def driver_id(self) -> DriverId:
        return DriverId.BITWIRE if self.name in BIT_WORKLOADS else DriverId.BATCH

    def options(self, worker_id: int = 0, page_shift: int = 12,
                driver: DriverConfig | None = None) -> ProgramOptions:
        return ProgramOptions(worker_id, self.worker_count, self.n, self.driver_id, page_shift,
                              driver or DriverConfig(), dict(self.params))


def build_workload(spec: WorkloadSpec) -> Callable[[ProgramOptions], None]:
    """A builder function for ``spec``, ready for ``run_placement`` or ``plan``."""
    body = _PROGRAMS[spec.name]

    def program(opts: ProgramOptions) -> None:
        body(spec, opts)

    program.__name__ = spec.name
    return program


# --- inputs --------------------------------------------------------------


@dataclass
class WorkloadData:
    inputs: list[list[str]]  # one list of input lines per worker
    expected: list[str]      # concatenated output of all workers, in worker order
    global_inputs: list[str]


def _records(rng: random.Random, keys: list[int]) -> list[int]:
    return [(rng.getrandbits(96) << 32) | k for k in keys]


def _fixed_row(rng: random.Random, dim: int) -> str:
    # multiples of 1/16 in [-2, 2]: exact in binary fixed point
    vals = []
    for _ in range(dim):
        k = rng.randint(-32, 32)
        v = k / 16
        vals.append(str(int(v)) if v == int(v) else repr(v))
    return " ".join(vals)


def _global_inputs(spec: WorkloadSpec, rng: random.Random, dim: int) -> list[int | str]:
    n = spec.n
    name = spec.name
    if name == "merge":
        keys = rng.sample(range(1 << 32), 2 * n)
        rng.shuffle(keys)
        a, b = sorted(keys[:n]), sorted(keys[n:])
        return _records(rng, a) + _records(rng, b)
    if name == "sort":
        return _records(rng, rng.sample(range(1 << 32), n))
    if name == "ljoin":
        # small key range so that some pairs match
        keys = [rng.randrange(2 * n) for _ in range(2 * n)]
        return _records(rng, keys)
    if name == "mvmul":
        return [rng.randrange(256) for _ in range(n * n + n)]
    if name == "binfclayer":
        batch_n = int(spec.params.get("batch", n))
        return [rng.getrandbits(n) for _ in range(n + batch_n)]
    count = {"rsum": n, "rstats": n, "rmvmul": n * n + n}.get(name, 2 * n * n)
    return [_fixed_row(rng, dim) for _ in range(count)]


def generate_inputs(spec: WorkloadSpec, seed: int = 0, driver: DriverConfig | None = None) -> WorkloadData:
    """Deterministic inputs for ``spec`` and the oracle's expected output."""
    driver = driver or DriverConfig()
    # both matmul variants compute the same product, so they share inputs
    key = "rmatmul" if spec.name in ("n_rmatmul", "t_rmatmul") else spec.name
    rng = random.Random(f"{key}:{spec.n}:{seed}")
    lines = [str(v) for v in _global_inputs(spec, rng, driver.dimension)]
    W = spec.worker_count
    per = len(lines) // W
    inputs = [lines[w * per:(w + 1) * per] for w in range(W)]
    expected = ORACLES[spec.name](lines, spec.n, dimension=driver.dimension, params=spec.params)
    return WorkloadData(inputs, expected, lines)


def write_inputs(data: WorkloadData, directory, stem: str) -> dict:
    """Write per-worker input files and the expected output; returns their paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"inputs": [], "expected": d / f"{stem}.expected"}
    for w, lines in enumerate(data.inputs):
        p = d / f"{stem}.w{w}.input"
        p.write_text("".join(f"{x}\n" for x in lines))
        paths["inputs"].append(p)
    paths["expected"].write_text("".join(f"{x}\n" for x in data.expected))
    return paths


__all__ = [
    "ALL_WORKLOADS", "BATCH_WORKLOADS", "BIT_WORKLOADS", "DISTRIBUTED_WORKLOADS",
    "WorkloadData", "WorkloadSpec", "WorkloadSpecError", "build_workload",
    "generate_inputs", "tile_size", "write_inputs",
]
