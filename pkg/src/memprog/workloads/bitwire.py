"""Bit-wire workloads: merge, sort, ljoin, mvmul, binfclayer.

Records are 128-bit integers whose low 32 bits are the key.  Every
program reads all of its inputs first, computes its whole output, and only
then writes it out.
"""

from __future__ import annotations

from ..dsl import Integer, Party, ShardedArray, mux, multiply, popcount

RECORD_BITS = 128
KEY_BITS = 32


def _read(count: int, width: int, party: Party = Party.GARBLER) -> list[Integer]:
    return [Integer(width).mark_input(party) for _ in range(count)]


def _write(values) -> None:
    for v in values:
        v.mark_output()


def _swap_bit(x: Integer, y: Integer, ascending: bool) -> Integer:
    """1 when the pair (x, y) is out of order for the requested direction."""
    kx, ky = x.resize(KEY_BITS), y.resize(KEY_BITS)
    return (kx >= ky) if ascending else (ky >= kx)


def compare_exchange(x: Integer, y: Integer, ascending: bool = True) -> tuple[Integer, Integer]:
    s = _swap_bit(x, y, ascending)
    return mux(s, y, x), mux(s, x, y)


def _receive_like(peer: int, item: Integer) -> Integer:
    return Integer.receive(item.width, peer)


def _bitonic_stage(arr: ShardedArray, j: int, direction) -> None:
    """Compare-exchange every global pair (g, g ^ j); ``direction(g)`` is True for ascending."""
    L = arr.local_length
    if j < L:
        for i in range(L):
            g = arr.to_global(i)
            partner = g ^ j
            if partner > g:
                k = arr.to_local(partner)
                arr[i], arr[k] = compare_exchange(arr[i], arr[k], direction(g))
        return
    # the partner element lives on another worker: swap whole chunks
    peer = arr.worker_id ^ (j // L)
    lower = arr.worker_id < peer
    theirs = arr.exchange(peer, _receive_like)
    for i in range(L):
        g = arr.to_global(i)
        asc = direction(min(g, g ^ j))
        x, y = (arr[i], theirs[i]) if lower else (theirs[i], arr[i])
        s = _swap_bit(x, y, asc)
        arr[i] = mux(s, y, x) if lower else mux(s, x, y)
        theirs[i] = None


def bitonic_sort(arr: ShardedArray) -> None:
    n = arr.total_length
    k = 2
    while k <= n:
        j = k // 2
        while j >= 1:
            _bitonic_stage(arr, j, lambda g, k=k: (g & k) == 0)
            j //= 2
        k *= 2


def bitonic_merge(arr: ShardedArray) -> None:
    """Sort a bitonic sequence ascending."""
    j = arr.total_length // 2
    while j >= 1:
        _bitonic_stage(arr, j, lambda g: True)
        j //= 2


def merge(spec, opts) -> None:
    """Merge two sorted lists of ``n`` records each.

    Globally the input is list A followed by list B.  Merging runs on the
    bitonic sequence A ++ reverse(B); with several workers, the holders of
    B's chunks first exchange (and reverse) them into place.
    """
    n, W, w = spec.n, opts.worker_count, opts.worker_id
    arr = ShardedArray(2 * n, w, W)
    L = arr.local_length
    if W == 1:
        a = _read(n, RECORD_BITS, Party.GARBLER)
        b = _read(n, RECORD_BITS, Party.EVALUATOR)
        arr.items = a + b[::-1]
        del a, b
    else:
        party = Party.GARBLER if w < W // 2 else Party.EVALUATOR
        arr.items = _read(L, RECORD_BITS, party)
        if w >= W // 2:
            peer = 3 * W // 2 - 1 - w
            if peer != w:
                got = arr.exchange(peer, _receive_like)
                arr.items = got
                del got
            arr.items.reverse()
    bitonic_merge(arr)
    _write(arr.items)


def sort(spec, opts) -> None:
    """Bitonic sort of ``n`` records."""
    arr = ShardedArray(spec.n, opts.worker_id, opts.worker_count)
    arr.items = _read(arr.local_length, RECORD_BITS)
    bitonic_sort(arr)
    _write(arr.items)


def ljoin(spec, opts) -> None:
    """Loop join of two tables of ``n`` records on key equality.

    For every pair (i, j) the output holds the low 64 bits of A[i] and of
    B[j] side by side when the keys match, and zero otherwise.
    """
    n = spec.n
    a = _read(n, RECORD_BITS, Party.GARBLER)
    b = _read(n, RECORD_BITS, Party.EVALUATOR)
    zero = Integer.constant(RECORD_BITS, 0)
    a_lo = [x.resize(64).resize(RECORD_BITS) for x in a]
    b_hi = [x.resize(64).resize(RECORD_BITS) << 64 for x in b]
    a_key = [x.resize(KEY_BITS) for x in a]
    b_key = [x.resize(KEY_BITS) for x in b]
    del a, b
    out = []
    for i in range(n):
        for j in range(n):
            joined = a_lo[i] | b_hi[j]
            out.append(mux(a_key[i].eq(b_key[j]), joined, zero))
    del a_lo, b_hi, a_key, b_key, zero
    _write(out)


def mvmul(spec, opts) -> None:
    """y = M x over 8-bit inputs, 16-bit products and 32-bit sums."""
    n = spec.n
    m = [_read(n, 8, Party.GARBLER) for _ in range(n)]
    x = _read(n, 8, Party.EVALUATOR)
    x16 = [v.resize(16) for v in x]
    del x
    ys = []
    for i in range(n):
        acc = None
        for j in range(n):
            p = multiply(m[i][j].resize(16), x16[j]).resize(32)
            acc = p if acc is None else acc + p
        m[i] = None
        ys.append(acc)
    del x16, acc, p
    _write(ys)


def binfclayer(spec, opts) -> None:
    """Binary fully connected layer: sign(popcount(XNOR(W_i, x_b)) - n/2) per neuron and sample.

    Weights are ``n`` rows of ``n`` bits; the input is a batch of ``batch``
    (default ``n``) vectors of ``n`` bits.  Output bit (b, i) is 1 when at
    least half the bits of row i agree with sample b.
    """
    n = spec.n
    batch = int(spec.params.get("batch", n))
    weights = _read(n, n, Party.GARBLER)
    xs = _read(batch, n, Party.EVALUATOR)
    threshold = Integer.constant(n.bit_length(), n // 2)
    out = []
    for x in xs:
        for wrow in weights:
            agree = ~(wrow ^ x)
            out.append(popcount(agree) >= threshold)
    del weights, xs, threshold, agree, x, wrow
    _write(out)
