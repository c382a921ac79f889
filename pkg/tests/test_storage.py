from __future__ import annotations

import numpy as np
import pytest

from memprog.storage import FileStorage, SimulatedStorage, StorageError, VirtualClock


def page(fill: int, n: int = 1000) -> np.ndarray:
    return np.full(n, fill, dtype=np.uint8)


def test_simulated_round_trip():
    s = SimulatedStorage(1000)
    s.wait(s.issue_write(3, page(7)))
    dest = page(0)
    s.wait(s.issue_read(3, dest))
    assert (dest == 7).all()
    assert (s.reads, s.writes) == (1, 1)


def test_write_snapshots_at_issue():
    s = SimulatedStorage(1000)
    src = page(1)
    tok = s.issue_write(0, src)
    src[:] = 9
    s.wait(tok)
    dest = page(0)
    s.wait(s.issue_read(0, dest))
    assert (dest == 1).all()


def test_read_lands_only_at_wait():
    s = SimulatedStorage(1000)
    s.wait(s.issue_write(0, page(5)))
    dest = page(0)
    tok = s.issue_read(0, dest)
    assert (dest == 0).all()
    s.wait(tok)
    assert (dest == 5).all()


def test_device_queues_transfers_and_overlaps_latency():
    clock = VirtualClock()
    s = SimulatedStorage(1000, latency=2e-3, bandwidth=1e6, clock=clock)
    assert s.transfer_time == pytest.approx(3e-3)
    t1 = s.issue_write(0, page(1))
    t2 = s.issue_write(1, page(2))
    assert s.wait(t1) == pytest.approx(3e-3)
    assert s.wait(t2) == pytest.approx(4e-3)
    # an idle device starts at the current time
    clock.now = 10e-3
    assert s.wait(s.issue_read(0, page(0))) == pytest.approx(13e-3)


def test_simulated_errors():
    s = SimulatedStorage(1000)
    with pytest.raises(StorageError, match="never written"):
        s.issue_read(0, page(0))
    tok = s.issue_write(0, page(1))
    s.wait(tok)
    with pytest.raises(StorageError):
        s.wait(tok)
    with pytest.raises(ValueError):
        SimulatedStorage(1000, bandwidth=0)


def test_file_storage_round_trip(tmp_path):
    s = FileStorage(tmp_path / "swap.bin", 1000)
    try:
        toks = [s.issue_write(k, page(k + 1)) for k in range(4)]
        for t in toks:
            assert s.wait(t) is None
        for k in reversed(range(4)):
            dest = page(0)
            s.wait(s.issue_read(k, dest))
            assert (dest == k + 1).all()
        with pytest.raises(StorageError):
            s.issue_read(9, page(0))
        with pytest.raises(StorageError):
            s.wait(12345)
    finally:
        s.close()
    assert (tmp_path / "swap.bin").stat().st_size == 4000
