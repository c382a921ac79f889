"""Storage backends for swap directives.

Both backends satisfy the same small contract used by the engine:

* ``issue_read(storage_frame, dest) -> token`` starts filling ``dest``;
* ``issue_write(storage_frame, src) -> token`` starts writing ``src`` out;
* ``wait(token) -> float | None`` blocks until the transfer is complete and
  returns its (virtual) completion time, or ``None`` for wall-clock backends.

Issuing never blocks.  A read's memory effect is only guaranteed to be
visible once ``wait`` returns; waiting twice on a token is an error.
"""

from __future__ import annotations

import itertools
import os
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np


class StorageError(Exception):
    pass


class VirtualClock:
    """Simulated time shared by an engine and its storage device."""

    def __init__(self, now: float = 0.0):
        self.now = now


@dataclass
class _Transfer:
    kind: str
    frame: int
    dest: np.ndarray | None
    done_at: float


class SimulatedStorage:
    """Deterministic storage device on a virtual clock.

    Transfers queue on a single device: one issued at time ``t`` starts at
    ``max(t, device_free)`` and completes ``latency + size / bandwidth``
    later.  The device is busy only for the ``size / bandwidth`` part, so
    several requests can be in flight and latency overlaps, which is what
    makes a prefetch buffer useful.
    """

    def __init__(self, frame_bytes: int, latency: float = 100e-6, bandwidth: float = 2e9,
                 clock: VirtualClock | None = None):
        if latency < 0 or bandwidth <= 0:
            raise ValueError("latency must be >= 0 and bandwidth > 0")
        self.frame_bytes = frame_bytes
        self.latency = latency
        self.bandwidth = bandwidth
        self.clock = clock or VirtualClock()
        self.device_free = 0.0
        self._data: dict[int, bytes] = {}
        self._pending: dict[int, _Transfer] = {}
        self._ids = itertools.count()
        self.reads = 0
        self.writes = 0

    @property
    def transfer_time(self) -> float:
        return self.latency + self.frame_bytes / self.bandwidth

    def _schedule(self, nbytes: int) -> float:
        start = max(self.clock.now, self.device_free)
        busy = nbytes / self.bandwidth
        self.device_free = start + busy
        return start + self.latency + busy

    def issue_read(self, frame: int, dest: np.ndarray) -> int:
        if frame not in self._data:
            raise StorageError(f"read of storage frame {frame}, which was never written")
        tok = next(self._ids)
        self._pending[tok] = _Transfer("read", frame, dest, self._schedule(dest.nbytes))
        self.reads += 1
        return tok

    def issue_write(self, frame: int, src: np.ndarray) -> int:
        tok = next(self._ids)
        self._data[frame] = src.tobytes()
        self._pending[tok] = _Transfer("write", frame, None, self._schedule(src.nbytes))
        self.writes += 1
        return tok

    def wait(self, token: int) -> float:
        tr = self._pending.pop(token, None)
        if tr is None:
            raise StorageError(f"wait on unknown or already completed token {token}")
        if tr.kind == "read":
            tr.dest[:] = np.frombuffer(self._data[tr.frame], dtype=np.uint8).reshape(tr.dest.shape)
        return tr.done_at

    def close(self) -> None:
        self._pending.clear()


class FileStorage:
    """Swap file on a real filesystem, serviced by one background thread."""

    def __init__(self, path: str | os.PathLike, frame_bytes: int):
        self.path = os.fspath(path)
        self.frame_bytes = frame_bytes
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o600)
        self._pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="swap")
        self._pending: dict[int, tuple[Future, np.ndarray | None]] = {}
        self._ids = itertools.count()
        self._lock = threading.Lock()
        self._written: set[int] = set()

    def _read(self, frame: int) -> bytes:
        data = os.pread(self._fd, self.frame_bytes, frame * self.frame_bytes)
        if len(data) != self.frame_bytes:
            raise StorageError(f"short read of storage frame {frame} from {self.path}")
        return data

    def _write(self, frame: int, data: bytes) -> None:
        n = os.pwrite(self._fd, data, frame * self.frame_bytes)
        if n != len(data):
            raise StorageError(f"short write of storage frame {frame} to {self.path}")

    def issue_read(self, frame: int, dest: np.ndarray) -> int:
        if frame not in self._written:
            raise StorageError(f"read of storage frame {frame}, which was never written")
        tok = next(self._ids)
        self._pending[tok] = (self._pool.submit(self._read, frame), dest)
        return tok

    def issue_write(self, frame: int, src: np.ndarray) -> int:
        tok = next(self._ids)
        self._written.add(frame)
        self._pending[tok] = (self._pool.submit(self._write, frame, src.tobytes()), None)
        return tok

    def wait(self, token: int) -> None:
        entry = self._pending.pop(token, None)
        if entry is None:
            raise StorageError(f"wait on unknown or already completed token {token}")
        fut, dest = entry
        data = fut.result()
        if dest is not None:
            dest[:] = np.frombuffer(data, dtype=np.uint8).reshape(dest.shape)
        return None

    def close(self) -> None:
        self._pool.shutdown(wait=True)
        os.close(self._fd)
