"""Command-line interface: ``memprog {plan,run,inspect,bench,gen-inputs}``.

Typical session::

    memprog gen-inputs rsum --n 64 --out-dir data
    memprog plan rsum --n 64 --config run.yaml --out rsum.mpg
    memprog run rsum.mpg --config run.yaml --input data/rsum.w0.input --stats stats.json
    memprog inspect rsum.mpg | head

``plan`` prints plan statistics as JSON; ``run`` writes the program's
output lines to stdout (or ``--output``) and its execution statistics
(an ``ExecStats`` object per worker) to ``--stats`` or stderr.  Any error
exits with status 1 and a one-line diagnostic.
"""

from __future__ import annotations

import argparse
import importlib
import io
import json
import logging
import sys
from pathlib import Path

from .bench import SCENARIOS, BenchSettings, run_bench
from .bytecode import BytecodeError, DriverId, disassemble, format_header, read_header, read_program
from .channels import ChannelError, TcpChannel
from .config import ConfigError, RunConfig
from .drivers import ProtocolError
from .dsl import BuilderError, ProgramOptions
from .engine import Engine, EngineError
from .planner import plan
from .programs import PROGRAMS
from .replacement import InfeasiblePlanError, ReplacementError
from .runner import SimulatorParams, WorkerResult, run_workers
from .scheduling import SchedulingError
from .storage import FileStorage, SimulatedStorage, StorageError, VirtualClock
from .workloads import (
    ALL_WORKLOADS, WorkloadSpec, WorkloadSpecError, build_workload, generate_inputs, write_inputs,
)

log = logging.getLogger("memprog")

_ERRORS = (BuilderError, BytecodeError, ChannelError, ConfigError, EngineError, ReplacementError,
           InfeasiblePlanError, SchedulingError, StorageError, WorkloadSpecError,
           ProtocolError, OSError, ValueError, RuntimeError)


class CliError(Exception):
    pass


def _parse_params(items) -> dict:
    params = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = int(value)
        except ValueError:
            params[key] = value
    return params


def _resolve_program(target: str, n: int, workers: int, params: dict, driver: str | None):
    """A (builder function, driver id, WorkloadSpec or None) for ``target``."""
    if target in ALL_WORKLOADS:
        spec = WorkloadSpec(target, n, workers, params)
        return build_workload(spec), spec.driver_id, spec
    if target in PROGRAMS:
        fn = PROGRAMS[target]
    elif ":" in target:
        mod, _, name = target.partition(":")
        try:
            fn = getattr(importlib.import_module(mod), name)
        except (ImportError, AttributeError) as exc:
            raise CliError(f"cannot load program {target!r}: {exc}") from None
    else:
        choices = ", ".join([*ALL_WORKLOADS, *PROGRAMS])
        raise CliError(f"unknown program {target!r}; choose from {choices} or give module:function")
    if driver is not None:
        driver_id = DriverId[driver.upper()]
    else:
        driver_id = getattr(fn, "driver_id", DriverId.BITWIRE)
    return fn, driver_id, None


# --- plan -------------------------------------------------------------------


def _plan_one(fn, driver_id, spec, cfg: RunConfig, worker_id: int, workers: int, n: int,
              params: dict, out: Path, keep: bool) -> dict:
    wcfg = cfg.for_worker(worker_id)
    shift = wcfg.page_shift_for(driver_id)
    opts = ProgramOptions(worker_id, workers, n, driver_id, shift, wcfg.driver, dict(params))
    T = wcfg.frames_for(driver_id)
    policy = wcfg.policy
    B = wcfg.prefetch_for(driver_id) if policy == "min" else 0
    la = wcfg.lookahead_for(driver_id) if B else 0
    res = plan(fn, opts, out, frames=T, lookahead=la, prefetch_frames=B, policy=policy,
               keep_intermediates=keep, measure_memory=True)
    info = res.as_dict()
    info.update(worker_id=worker_id, page_bytes=wcfg.page_bytes(driver_id), policy=policy,
                memory_limit=wcfg.memory_limit)
    if keep:
        info["intermediates"] = {k: str(v) for k, v in res.intermediates.items()}
    return info


def cmd_plan(args) -> int:
    cfg = RunConfig.load(args.config)
    params = _parse_params(args.param)
    fn, driver_id, spec = _resolve_program(args.program, args.n, args.workers, params, args.driver)
    out = Path(args.out or f"{Path(args.program.replace(':', '_')).name}.mpg")
    if args.worker_id is not None:
        ids = [args.worker_id]
        if not 0 <= args.worker_id < args.workers:
            raise CliError(f"--worker-id {args.worker_id} outside 0..{args.workers - 1}")
    else:
        ids = list(range(args.workers))
    stats = []
    for w in ids:
        path = out if args.workers == 1 else out.with_name(f"{out.stem}.w{w}{out.suffix}")
        stats.append(_plan_one(fn, driver_id, spec, cfg, w, args.workers, args.n, params, path,
                               args.keep_intermediates))
    text = json.dumps(stats[0] if len(stats) == 1 else stats, indent=2, sort_keys=True)
    if args.stats:
        Path(args.stats).write_text(text + "\n")
    print(text)
    return 0


# --- run --------------------------------------------------------------------


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read input file {path}: {exc.strerror or exc}") from None


def _storage_factory(cfg: RunConfig, worker_base: int, worker_count: int):
    """Per-worker storage: a simulated device, or a swap file (``.wN`` suffix per worker)."""

    def make(w: int, program):
        wid = worker_base + w
        wcfg = cfg.for_worker(wid)
        header = read_header(program)
        frame_bytes = header.page_size * wcfg.driver.unit_bytes(header.driver_id)
        sc = wcfg.storage
        if sc.kind == "file":
            path = Path(sc.path or "memprog.swap")
            if worker_count > 1:
                path = path.with_name(f"{path.name}.w{wid}")
            return FileStorage(path, frame_bytes)
        return SimulatedStorage(frame_bytes, sc.latency, sc.bandwidth, VirtualClock())

    return make


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    programs = [Path(p) for p in args.programs]
    for p in programs:
        if not p.exists():
            raise CliError(f"program file {p} not found")
    W = len(programs)
    if args.input and len(args.input) != W:
        raise CliError(f"{W} program(s) but {len(args.input)} --input file(s)")
    inputs = [_read_lines(p) for p in args.input] if args.input else [[] for _ in programs]
    base = args.worker_id or 0
    factory = _storage_factory(cfg, base, W)
    if cfg.channel.kind == "tcp":
        if W != 1 or args.worker_id is None:
            raise CliError("a tcp channel runs one worker per process: give one program and --worker-id")
        results = [_run_tcp(cfg, programs[0], inputs[0], args.worker_id, factory)]
    else:
        if W > 1 and args.worker_id is not None:
            raise CliError("--worker-id applies to a single program")
        results = run_workers(programs, inputs, cfg.driver, SimulatorParams(), cfg.timing,
                              storage_factory=factory)
    lines = [line for r in results for line in r.output]
    text = "".join(f"{x}\n" for x in lines)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    stats = [r.stats.as_dict() for r in results]
    stats_text = json.dumps(stats[0] if W == 1 else stats, indent=2, sort_keys=True) + "\n"
    if args.stats:
        Path(args.stats).write_text(stats_text)
    else:
        sys.stderr.write(stats_text)
    return 0


def _run_tcp(cfg: RunConfig, program: Path, inputs, worker_id: int, factory) -> WorkerResult:
    wcfg = cfg.for_worker(worker_id)
    header, insts = read_program(program)
    storage = factory(0, program)
    channel = TcpChannel(worker_id, wcfg.channel.endpoints)
    try:
        engine = Engine(header, wcfg.driver.make(header.driver_id), storage, channel, wcfg.timing)
        out = io.StringIO()
        stats = engine.run(insts, inputs, out)
    finally:
        channel.close()
        storage.close()
    return WorkerResult(out.getvalue().splitlines(), stats)


# --- inspect ----------------------------------------------------------------


def cmd_inspect(args) -> int:
    if args.header:
        sys.stdout.write(format_header(read_header(args.program)) + "\n")
    else:
        disassemble(args.program, sys.stdout)
    return 0


# --- bench ------------------------------------------------------------------


def cmd_bench(args) -> int:
    settings = BenchSettings(seed=args.seed, memory_fraction=args.fraction)
    if args.workloads:
        unknown = set(args.workloads) - set(ALL_WORKLOADS)
        if unknown:
            raise CliError(f"unknown workload(s): {', '.join(sorted(unknown))}")
        settings.workloads = tuple(args.workloads)
    if args.scenarios:
        settings.scenarios = tuple(dict.fromkeys(["unbounded", *args.scenarios]))
    for item in args.size or ():
        name, _, rest = item.partition("=")
        n, _, shift = rest.partition(",")
        if name not in settings.sizes or not n:
            raise CliError(f"--size expects workload=n[,page_shift], got {item!r}")
        old = settings.sizes[name]
        settings.sizes[name] = (int(n), int(shift) if shift else old[1])
    report = run_bench(settings, jobs=args.jobs)
    paths = report.write(args.out_dir)
    for c in report.cells:
        print(f"{c.workload:12s} {c.scenario:14s} ratio={c.ratio:7.3f} swap_ins={c.stats['swap_ins']:6d}"
              f" stalls={c.stats['finish_swapin_stalls']:5d} correct={c.correct}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0 if all(c.correct for c in report.cells) else 1


# --- gen-inputs -------------------------------------------------------------


def cmd_gen_inputs(args) -> int:
    cfg = RunConfig.load(args.config)
    spec = WorkloadSpec(args.workload, args.n, args.workers, _parse_params(args.param))
    data = generate_inputs(spec, args.seed, cfg.driver)
    paths = write_inputs(data, args.out_dir, args.workload)
    for p in paths["inputs"]:
        print(p)
    print(paths["expected"])
    return 0


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memprog", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan a workload or program into a memory program")
    p.add_argument("program", help=f"workload ({', '.join(ALL_WORKLOADS)}), example program "
                                   f"({', '.join(PROGRAMS)}) or module:function")
    p.add_argument("--n", type=int, default=16, help="problem size (default 16)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--worker-id", type=int, help="plan only this worker (default: all)")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--driver", choices=["bitwire", "batch"], help="driver for module:function programs")
    p.add_argument("--out", help="memory program path (workers get .wN suffixes)")
    p.add_argument("--stats", help="also write plan stats JSON here")
    p.add_argument("--keep-intermediates", action="store_true")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="workload parameter")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="execute memory programs (several = in-process workers)")
    p.add_argument("programs", nargs="+")
    p.add_argument("--input", action="append", help="input file, one per program, in order")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--worker-id", type=int, help="worker id of a single program (tcp channel)")
    p.add_argument("--output", help="write output lines here instead of stdout")
    p.add_argument("--stats", help="write ExecStats JSON here instead of stderr")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inspect", help="disassemble a program file")
    p.add_argument("program")
    p.add_argument("--header", action="store_true", help="print only the header")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="run the workload x scenario benchmark on the simulator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="bench-out")
    p.add_argument("--workloads", nargs="+", metavar="NAME")
    p.add_argument("--scenarios", nargs="+", choices=SCENARIOS)
    p.add_argument("--fraction", type=float, default=0.25, help="memory limit / footprint")
    p.add_argument("--size", action="append", metavar="NAME=N[,SHIFT]", help="override a problem size")
    p.add_argument("--jobs", type=int, default=1, help="workloads run in parallel processes")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-inputs", help="write deterministic inputs and expected output")
    p.add_argument("workload", choices=ALL_WORKLOADS)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="YAML run configuration (driver block)")
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_gen_inputs)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, *_ERRORS) as exc:
        print(f"memprog {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
