"""Leveled-batch workloads: rsum, rstats, rmvmul, n_rmatmul, t_rmatmul.

Products are accumulated unrelinearized and relinearized once per result,
which saves both relinearizations and memory traffic.
"""

from __future__ import annotations

import math
from fractions import Fraction

from ..dsl import Batch, BuilderError, Party, ShardedArray, current_builder


def _read(count: int, level: int | None = None, party: Party = Party.GARBLER) -> list[Batch]:
    return [Batch(level).mark_input(party) for _ in range(count)]


def _write(values) -> None:
    for v in values:
        v.mark_output()


def _need_levels(k: int) -> None:
    if current_builder().max_level < k:
        raise BuilderError(f"this workload needs max_level >= {k}")


def _fold(values: list[Batch]) -> Batch:
    acc = values[0]
    values[0] = None
    for i in range(1, len(values)):
        acc = acc + values[i]
        values[i] = None
    return acc


def _reduce_to_zero(acc: list[Batch]) -> list[Batch]:
    """Tree-sum per-worker partial results onto worker 0."""
    b = current_builder()
    w, W = b.worker_id, b.worker_count
    step = 1
    while step < W:
        if w % (2 * step) == step:
            for v in acc:
                b.post_send(v, w - step)
            b.barrier()
            return []
        if w % (2 * step) == 0:
            got = [Batch.receive(w + step, v.level, v.relinearized) for v in acc]
            b.barrier()
            acc = [x + y for x, y in zip(acc, got)]
            del got
        step *= 2
    return acc


def rsum(spec, opts) -> None:
    """Sum of ``n`` ciphertexts (left fold); the result is written by worker 0."""
    arr = ShardedArray(spec.n, opts.worker_id, opts.worker_count)
    xs = _read(arr.local_length)
    partial = _fold(xs)
    result = _reduce_to_zero([partial])
    del partial
    _write(result)


def rstats(spec, opts) -> None:
    """Mean and population variance of ``n`` ciphertexts (slot-wise).

    variance = E[x^2] - E[x]^2.  The squares are summed unrelinearized and
    relinearized once; the divisions by n are plaintext multiplies.
    """
    _need_levels(2)
    n = spec.n
    arr = ShardedArray(n, opts.worker_id, opts.worker_count)
    xs = _read(arr.local_length)
    sq = None
    for x in xs:
        p = x * x
        sq = p if sq is None else sq + p
    del p
    total = _fold(xs)
    parts = _reduce_to_zero([total, sq])
    del total, sq
    if not parts:
        return
    total, sq = parts
    del parts
    ex2 = sq.relin_rescale().mul_plain(Fraction(1, n))
    mean = total.mul_plain(Fraction(1, n))
    neg_mean = total.mul_plain(Fraction(-1, n))
    del total, sq
    variance = ex2 + (mean * neg_mean).relin_rescale()
    del ex2, neg_mean
    _write([mean, variance])


def rmvmul(spec, opts) -> None:
    """y = M x for an n x n matrix and an n-vector of ciphertexts."""
    _need_levels(1)
    n = spec.n
    m = [_read(n, party=Party.GARBLER) for _ in range(n)]
    x = _read(n, party=Party.EVALUATOR)
    ys = []
    for i in range(n):
        acc = None
        for j in range(n):
            p = m[i][j] * x[j]
            acc = p if acc is None else acc + p
        m[i] = None
        ys.append(acc.relin_rescale())
    del x, acc, p
    _write(ys)


def n_rmatmul(spec, opts) -> None:
    """C = A B with the textbook i, j, k loop order."""
    _need_levels(1)
    n = spec.n
    a = [_read(n, party=Party.GARBLER) for _ in range(n)]
    b = [_read(n, party=Party.EVALUATOR) for _ in range(n)]
    c = []
    for i in range(n):
        for j in range(n):
            acc = None
            for k in range(n):
                p = a[i][k] * b[k][j]
                acc = p if acc is None else acc + p
            c.append(acc.relin_rescale())
    del a, b, acc, p
    _write(c)


def tile_size(n: int, frames: int, page_bytes: int, relin_bytes: int, unrelin_bytes: int) -> int:
    """Largest power-of-two tile t (dividing n) whose A, B and accumulator tiles fit in ``frames``."""
    per_relin = max(1, page_bytes // relin_bytes)
    per_unrelin = max(1, page_bytes // unrelin_bytes)
    best = 1
    t = 1
    while t <= n:
        pages = 2 * math.ceil(t * t / per_relin) + math.ceil(t * t / per_unrelin)
        if pages <= frames:
            best = t
        t *= 2
    return best


def t_rmatmul(spec, opts) -> None:
    """C = A B computed tile by tile, keeping each output tile's sums unrelinearized."""
    _need_levels(1)
    n = spec.n
    t = int(spec.params.get("tile", max(1, n // 2)))
    if t < 1 or n % t:
        raise BuilderError(f"tile size {t} must divide n={n}")
    a = [_read(n, party=Party.GARBLER) for _ in range(n)]
    b = [_read(n, party=Party.EVALUATOR) for _ in range(n)]
    c = [[None] * n for _ in range(n)]
    for ii in range(0, n, t):
        for jj in range(0, n, t):
            acc = [[None] * t for _ in range(t)]
            for kk in range(0, n, t):
                for i in range(t):
                    for j in range(t):
                        for k in range(t):
                            p = a[ii + i][kk + k] * b[kk + k][jj + j]
                            acc[i][j] = p if acc[i][j] is None else acc[i][j] + p
            for i in range(t):
                for j in range(t):
                    c[ii + i][jj + j] = acc[i][j].relin_rescale()
                    acc[i][j] = None
    del a, b, acc, p
    _write([v for row in c for v in row])
