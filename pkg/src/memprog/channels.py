"""Worker-to-worker channels for network directives.

A channel belongs to one worker thread.  ``post_send`` hands bytes to the
transport immediately; ``post_receive`` only records a destination
buffer.  ``barrier`` blocks until every posted receive has been filled.
Messages between a pair of workers are delivered in posting order.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time

import numpy as np

_LEN = struct.Struct("<Q")


class ChannelError(Exception):
    pass


class _Endpoint:
    def __init__(self, worker_id: int, worker_count: int, timeout: float):
        self.worker_id = worker_id
        self.worker_count = worker_count
        self.timeout = timeout
        self._receives: list[tuple[int, np.ndarray]] = []
        self.bytes_sent = 0

    @property
    def pending(self) -> int:
        return len(self._receives)

    def _check_peer(self, peer: int) -> None:
        if peer == self.worker_id or not 0 <= peer < self.worker_count:
            raise ChannelError(f"worker {self.worker_id}: invalid peer {peer}")

    def post_send(self, peer: int, data: bytes) -> None:
        self._check_peer(peer)
        self._send(peer, bytes(data))
        self.bytes_sent += len(data)

    def post_receive(self, peer: int, dest: np.ndarray) -> None:
        self._check_peer(peer)
        self._receives.append((peer, dest))

    def barrier(self) -> None:
        receives, self._receives = self._receives, []
        for peer, dest in receives:
            data = self._recv(peer)
            if len(data) != dest.nbytes:
                raise ChannelError(
                    f"worker {self.worker_id}: expected {dest.nbytes} bytes from {peer}, got {len(data)}"
                )
            dest[:] = np.frombuffer(data, dtype=np.uint8)

    def _send(self, peer: int, data: bytes) -> None:
        raise NotImplementedError

    def _recv(self, peer: int) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessNetwork:
    """Message queues connecting ``worker_count`` workers in one process."""

    def __init__(self, worker_count: int, timeout: float = 60.0):
        self.worker_count = worker_count
        self.timeout = timeout
        self._queues = {
            (s, d): queue.SimpleQueue()
            for s in range(worker_count) for d in range(worker_count) if s != d
        }

    def endpoint(self, worker_id: int) -> "InProcessChannel":
        return InProcessChannel(self, worker_id)


class InProcessChannel(_Endpoint):
    def __init__(self, net: InProcessNetwork, worker_id: int):
        super().__init__(worker_id, net.worker_count, net.timeout)
        self._net = net

    def _send(self, peer: int, data: bytes) -> None:
        self._net._queues[(self.worker_id, peer)].put(data)

    def _recv(self, peer: int) -> bytes:
        try:
            return self._net._queues[(peer, self.worker_id)].get(timeout=self.timeout)
        except queue.Empty:
            raise ChannelError(
                f"worker {self.worker_id}: timed out waiting for worker {peer}"
            ) from None


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise ChannelError("connection closed mid-message")
        buf += chunk
    return bytes(buf)


class TcpChannel(_Endpoint):
    """Pairwise TCP connections; each message is prefixed by its 8-byte LE length.

    Worker ``i`` listens on ``addresses[i]``; it accepts connections from
    higher-numbered workers and connects to lower-numbered ones.  Sends go
    through a per-peer writer thread so two workers sending large messages
    to each other cannot deadlock on full socket buffers.
    """

    def __init__(self, worker_id: int, addresses: list[tuple[str, int]], timeout: float = 60.0):
        super().__init__(worker_id, len(addresses), timeout)
        self._socks: dict[int, socket.socket] = {}
        self._outq: dict[int, queue.SimpleQueue] = {}
        self._writers: list[threading.Thread] = []
        self._errors: list[BaseException] = []
        self._connect(addresses)
        for peer, sock in self._socks.items():
            q: queue.SimpleQueue = queue.SimpleQueue()
            self._outq[peer] = q
            t = threading.Thread(target=self._writer, args=(sock, q), daemon=True)
            t.start()
            self._writers.append(t)

    def _connect(self, addresses: list[tuple[str, int]]) -> None:
        me = self.worker_id
        higher = len(addresses) - me - 1
        listener = None
        if higher:
            listener = socket.create_server(addresses[me], reuse_port=False)
            listener.settimeout(self.timeout)
        for peer in range(me):
            deadline = time.monotonic() + self.timeout
            while True:
                try:
                    s = socket.create_connection(addresses[peer], timeout=self.timeout)
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise ChannelError(f"worker {me}: cannot reach worker {peer}") from None
                    time.sleep(0.05)
            s.sendall(_LEN.pack(me))
            self._socks[peer] = s
        for _ in range(higher):
            s, _ = listener.accept()
            s.settimeout(self.timeout)
            (peer,) = _LEN.unpack(_recv_exact(s, _LEN.size))
            self._socks[int(peer)] = s
        if listener is not None:
            listener.close()
        for s in self._socks.values():
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _writer(self, sock: socket.socket, q: queue.SimpleQueue) -> None:
        while True:
            data = q.get()
            if data is None:
                return
            try:
                sock.sendall(_LEN.pack(len(data)) + data)
            except OSError as exc:
                self._errors.append(exc)
                return

    def _send(self, peer: int, data: bytes) -> None:
        if self._errors:
            raise ChannelError(f"send failed: {self._errors[0]}")
        self._outq[peer].put(data)

    def _recv(self, peer: int) -> bytes:
        sock = self._socks[peer]
        (n,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
        return _recv_exact(sock, n)

    def close(self) -> None:
        for q in self._outq.values():
            q.put(None)
        for t in self._writers:
            t.join(timeout=self.timeout)
        for s in self._socks.values():
            s.close()
