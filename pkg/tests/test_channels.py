from __future__ import annotations

import socket
import threading

import numpy as np
import pytest

from memprog.channels import ChannelError, InProcessNetwork, TcpChannel


def test_in_process_exchange_in_posting_order():
    net = InProcessNetwork(2)
    a, b = net.endpoint(0), net.endpoint(1)
    a.post_send(1, b"first")
    a.post_send(1, b"second")
    d1 = np.zeros(5, dtype=np.uint8)
    d2 = np.zeros(6, dtype=np.uint8)
    b.post_receive(0, d1)
    b.post_receive(0, d2)
    assert b.pending == 2
    assert not d1.any()  # nothing lands before the barrier
    b.barrier()
    assert d1.tobytes() == b"first" and d2.tobytes() == b"second"
    assert b.pending == 0 and a.bytes_sent == 11


def test_barrier_with_nothing_posted_returns():
    InProcessNetwork(2).endpoint(0).barrier()


def test_invalid_peers():
    ep = InProcessNetwork(3).endpoint(1)
    for peer in (1, 3, -1):
        with pytest.raises(ChannelError):
            ep.post_send(peer, b"x")


def test_length_mismatch_and_timeout():
    net = InProcessNetwork(2, timeout=0.05)
    a, b = net.endpoint(0), net.endpoint(1)
    a.post_send(1, b"abc")
    b.post_receive(0, np.zeros(4, dtype=np.uint8))
    with pytest.raises(ChannelError, match="expected 4 bytes"):
        b.barrier()
    b.post_receive(0, np.zeros(1, dtype=np.uint8))
    with pytest.raises(ChannelError, match="timed out"):
        b.barrier()


def free_ports(n):
    socks = [socket.socket() for _ in range(n)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def test_tcp_all_to_all():
    W = 3
    addrs = [("127.0.0.1", p) for p in free_ports(W)]
    results = {}
    errors = []
    payload = lambda s, d: bytes([s * 16 + d]) * (100_000 + s)  # noqa: E731

    def worker(w):
        try:
            ch = TcpChannel(w, addrs, timeout=10)
            try:
                bufs = {}
                for peer in range(W):
                    if peer != w:
                        ch.post_send(peer, payload(w, peer))
                        bufs[peer] = np.zeros(100_000 + peer, dtype=np.uint8)
                        ch.post_receive(peer, bufs[peer])
                ch.barrier()
                results[w] = {p: b.tobytes() for p, b in bufs.items()}
            finally:
                ch.close()
        except BaseException as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(W)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(30)
    assert not errors, errors
    for w in range(W):
        for p, data in results[w].items():
            assert data == payload(p, w)
