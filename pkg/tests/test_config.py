from __future__ import annotations

import pytest

from memprog.bytecode import DriverId
from memprog.config import ConfigError, RunConfig


def write(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return p


def test_defaults():
    cfg = RunConfig.load(None)
    assert cfg.frames_for(DriverId.BITWIRE) is None
    assert cfg.prefetch_for(DriverId.BITWIRE) == 0
    assert cfg.page_bytes(DriverId.BITWIRE) == 64 * 1024
    assert cfg.page_bytes(DriverId.BATCH) == 2 * 1024 * 1024
    assert cfg.lookahead_for(DriverId.BATCH) == 100


def test_full_file(tmp_path):
    cfg = RunConfig.load(write(tmp_path, """
memory_limit: 1048576
page_shift: 10
lookahead: 50
prefetch_frames: 4
storage: {kind: file, path: /tmp/x}
timing: {gate_time: 1.0e-8}
channel: {kind: tcp, endpoints: [[127.0.0.1, 9000], [127.0.0.1, 9001]]}
workers:
  1: {memory_limit: 524288, timing: {gate_time: 2.0e-8}}
"""))
    # 1 MiB of 16 KiB pages (1024 wires x 16 bytes) is 64 frames, 4 of them prefetch
    assert cfg.frames_for(DriverId.BITWIRE) == 60
    assert cfg.channel.endpoints == [("127.0.0.1", 9000), ("127.0.0.1", 9001)]
    w1 = cfg.for_worker(1)
    assert w1.frames_for(DriverId.BITWIRE) == 28 and w1.timing.gate_time == 2e-8
    assert cfg.timing.gate_time == 1e-8  # the base config is untouched
    assert cfg.for_worker(0) is cfg


def test_baseline_policy_uses_no_prefetch_frames():
    cfg = RunConfig.from_dict({"memory_limit": 64 * 16 * 16, "page_shift": 4, "prefetch_frames": 8,
                               "policy": "lru"})
    assert cfg.frames_for(DriverId.BITWIRE) == 64


@pytest.mark.parametrize("data, msg", [
    ({"bogus": 1}, "unknown config keys"),
    ({"storage": {"kind": "tape"}}, "storage kind"),
    ({"channel": {"kind": "carrier-pigeon"}}, "channel kind"),
    ({"memory_limit": "lots"}, "unbounded"),
    ({"policy": "random"}, "policy"),
    ({"timing": {"warp": 9}}, "unknown keys in timing"),
    ({"timing": 3}, "mapping"),
])
def test_invalid_configs(data, msg):
    with pytest.raises(ConfigError, match=msg):
        RunConfig.from_dict(data)


def test_memory_limit_too_small():
    cfg = RunConfig.from_dict({"memory_limit": 1024, "prefetch_frames": 2})
    with pytest.raises(ConfigError, match="no frames"):
        cfg.frames_for(DriverId.BITWIRE)


def test_unbounded_string_and_bad_yaml(tmp_path):
    assert RunConfig.from_dict({"memory_limit": "unbounded"}).memory_limit is None
    with pytest.raises(ConfigError):
        RunConfig.load(write(tmp_path, "memory_limit: [1, 2"))
    with pytest.raises(ConfigError, match="worker 0"):
        RunConfig.from_dict({"workers": {0: {"nope": 1}}}).for_worker(0)
