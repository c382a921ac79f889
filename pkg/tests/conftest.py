from __future__ import annotations

import itertools
import tempfile
from pathlib import Path

import pytest

from memprog.bytecode import DriverId, load_program
from memprog.drivers import DriverConfig
from memprog.dsl import ProgramOptions
from memprog.planner import plan, run_placement
from memprog.runner import SimulatorParams, run_workers
from memprog.workloads import WorkloadSpec, build_workload, generate_inputs

SMALL_DRIVER = DriverConfig(dimension=4, relin_unit=256, unrelin_unit=384)


def options(driver_id=DriverId.BITWIRE, page_shift=8, n=0, worker_id=0, worker_count=1,
            driver=None, **params) -> ProgramOptions:
    return ProgramOptions(worker_id, worker_count, n, driver_id, page_shift,
                          driver or SMALL_DRIVER, params)


class Workspace:
    """Scratch directory with helpers to build, plan and run small programs."""

    def __init__(self, root: Path):
        self.root = root
        self._ids = itertools.count()

    def path(self, stem: str = "prog") -> Path:
        return self.root / f"{stem}{next(self._ids)}.mpg"

    def build(self, fn, opts: ProgramOptions | None = None):
        """Virtual program of ``fn``: (header, instructions, allocator stats)."""
        opts = opts or options()
        res = run_placement(fn, opts, self.path("virtual"))
        header, insts = load_program(res.path)
        return header, insts, res.allocator

    def plan(self, fn, opts: ProgramOptions | None = None, **kw):
        return plan(fn, opts or options(), self.path("plan"), **kw)

    def run(self, program, inputs, driver=None, sim=None, timing=None):
        return run_workers([program], [list(inputs)], driver or SMALL_DRIVER,
                           sim or SimulatorParams(), timing)[0]

    def execute(self, fn, inputs, opts: ProgramOptions | None = None, **plan_kw):
        """Plan ``fn`` (unbounded unless frames given) and run it; returns output lines."""
        opts = opts or options()
        res = self.plan(fn, opts, **plan_kw)
        return self.run(res.program, inputs, opts.driver).output


    def run_spec(self, spec: WorkloadSpec, page_shift: int, seed: int = 0, driver=None,
                 sim=None, timing=None, **plan_kw):
        """Plan every worker of ``spec`` and run them together.

        Returns (global output, generated data, per-worker plan results,
        per-worker run results).
        """
        driver = driver or SMALL_DRIVER
        data = generate_inputs(spec, seed, driver)
        program = build_workload(spec)
        plans = [
            self.plan(program, spec.options(w, page_shift, driver), **plan_kw)
            for w in range(spec.worker_count)
        ]
        results = run_workers([p.program for p in plans], data.inputs, driver,
                              sim or SimulatorParams(), timing)
        output = [line for r in results for line in r.output]
        return output, data, plans, results


@pytest.fixture
def ws(tmp_path) -> Workspace:
    return Workspace(tmp_path)


@pytest.fixture(scope="module")
def module_ws():
    with tempfile.TemporaryDirectory() as d:
        yield Workspace(Path(d))


# --- acceptance reporting ------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Remember a criterion's verdict for the PASS/FAIL summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
