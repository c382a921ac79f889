"""Run configuration, read from YAML.

Schema (every key optional)::

    memory_limit: 8388608     # bytes per worker, or "unbounded"
    page_shift: 12            # log2 page size in address units
    lookahead: 10000          # instructions
    prefetch_frames: 256      # B
    policy: min               # min | lru | fifo
    driver: {wire_bytes: 16, max_level: 2, dimension: 4096,
             relin_unit: 65536, unrelin_unit: 98304, seed: 0}
    storage: {kind: simulated, latency: 1.0e-4, bandwidth: 2.0e9}
             # or {kind: file, path: /tmp/swap}
    timing: {gate_time: 5.0e-8, batch_op_time: 1.0e-3,
             instruction_time: 0.0, page_copy_time: 0.0}
    channel: {kind: inprocess}
             # or {kind: tcp, endpoints: [[127.0.0.1, 9000], [127.0.0.1, 9001]]}
    workers:                  # per-worker overrides of any top-level key
      1: {memory_limit: 4194304}

When a key is absent the defaults depend on the driver: bit-wire programs
use 64 KiB pages, lookahead 10000 and B = 256; batch programs use 2 MiB
pages, lookahead 100 and B = 16.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, fields

import yaml

from .bytecode import DriverId
from .drivers import DriverConfig
from .engine import TimingModel


class ConfigError(ValueError):
    pass


PAGE_BYTES_DEFAULT = {DriverId.BITWIRE: 64 * 1024, DriverId.BATCH: 2 * 1024 * 1024}
LOOKAHEAD_DEFAULT = {DriverId.BITWIRE: 10_000, DriverId.BATCH: 100}
PREFETCH_DEFAULT = {DriverId.BITWIRE: 256, DriverId.BATCH: 16}


@dataclass
class StorageConfig:
    kind: str = "simulated"
    latency: float = 100e-6
    bandwidth: float = 2e9
    path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("simulated", "file"):
            raise ConfigError(f"storage kind must be 'simulated' or 'file', got {self.kind!r}")


@dataclass
class ChannelConfig:
    kind: str = "inprocess"
    endpoints: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kind not in ("inprocess", "tcp"):
            raise ConfigError(f"channel kind must be 'inprocess' or 'tcp', got {self.kind!r}")
        self.endpoints = [(str(h), int(p)) for h, p in self.endpoints]


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {', '.join(sorted(extra))}")
    return cls(**data)


@dataclass
class RunConfig:
    memory_limit: int | None = None
    page_shift: int | None = None
    lookahead: int | None = None
    prefetch_frames: int | None = None
    policy: str = "min"
    driver: DriverConfig = field(default_factory=DriverConfig)
    storage: StorageConfig = field(default_factory=StorageConfig)
    timing: TimingModel = field(default_factory=TimingModel)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    workers: dict = field(default_factory=dict)

    _SECTIONS = {"driver": DriverConfig, "storage": StorageConfig, "timing": TimingModel,
                 "channel": ChannelConfig}

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        for key, sub in cls._SECTIONS.items():
            data[key] = _build(sub, data.get(key), key)
        limit = data.get("memory_limit")
        if isinstance(limit, str):
            if limit.lower() != "unbounded":
                raise ConfigError(f"memory_limit must be bytes or 'unbounded', got {limit!r}")
            data["memory_limit"] = None
        workers = data.get("workers") or {}
        data["workers"] = {int(k): dict(v or {}) for k, v in workers.items()}
        cfg = cls(**data)
        if cfg.policy not in ("min", "lru", "fifo"):
            raise ConfigError(f"policy must be min, lru or fifo, got {cfg.policy!r}")
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "RunConfig":
        if path is None:
            return cls()
        with open(path) as fh:
            try:
                data = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def for_worker(self, worker_id: int) -> "RunConfig":
        """This config with worker ``worker_id``'s overrides applied."""
        over = self.workers.get(worker_id)
        if not over:
            return self
        cfg = copy.deepcopy(self)
        for key, value in over.items():
            if key in self._SECTIONS:
                section = getattr(cfg, key)
                for k, v in value.items():
                    if not hasattr(section, k):
                        raise ConfigError(f"unknown key {key}.{k} for worker {worker_id}")
                    setattr(section, k, v)
            elif hasattr(cfg, key) and key != "workers":
                setattr(cfg, key, None if value == "unbounded" else value)
            else:
                raise ConfigError(f"unknown key {key!r} for worker {worker_id}")
        return cfg

    # --- derived values
    def unit_bytes(self, driver_id: DriverId) -> int:
        return self.driver.unit_bytes(driver_id)

    def page_shift_for(self, driver_id: DriverId) -> int:
        if self.page_shift is not None:
            return self.page_shift
        units = PAGE_BYTES_DEFAULT[driver_id] // self.unit_bytes(driver_id)
        return max(0, units.bit_length() - 1)

    def page_bytes(self, driver_id: DriverId) -> int:
        return (1 << self.page_shift_for(driver_id)) * self.unit_bytes(driver_id)

    def lookahead_for(self, driver_id: DriverId) -> int:
        return LOOKAHEAD_DEFAULT[driver_id] if self.lookahead is None else self.lookahead

    def prefetch_for(self, driver_id: DriverId) -> int:
        if self.memory_limit is None:
            return 0
        return PREFETCH_DEFAULT[driver_id] if self.prefetch_frames is None else self.prefetch_frames

    def frames_for(self, driver_id: DriverId) -> int | None:
        """T = floor(memory_limit / page size) - B, or None when unbounded."""
        if self.memory_limit is None:
            return None
        B = self.prefetch_for(driver_id) if self.policy == "min" else 0
        T = self.memory_limit // self.page_bytes(driver_id) - B
        if T < 1:
            raise ConfigError(
                f"memory_limit {self.memory_limit} B holds {self.memory_limit // self.page_bytes(driver_id)}"
                f" pages of {self.page_bytes(driver_id)} B, leaving no frames after B={B} prefetch frames"
            )
        return T
