"""Plaintext reference implementations.

These work directly on the input lines with host integers and share no
code with the builders, engine or drivers.  Batch arithmetic follows the
fixed-point rules of the leveled driver: values are integers at scale
2^20, a product carries scale 2^40 until it is rescaled, and rescaling
rounds half up.
"""

from __future__ import annotations

from decimal import Decimal, localcontext
from fractions import Fraction

FRAC_BITS = 20
_MASK32 = (1 << 32) - 1
_MASK64 = (1 << 64) - 1


# --- bit-wire workloads -----------------------------------------------------


def merge(lines: list[str], n: int, **_) -> list[str]:
    recs = [int(x) for x in lines]
    a, b = recs[:n], recs[n:]
    return [str(r) for r in sorted(a + b, key=lambda r: r & _MASK32)]


def sort(lines: list[str], n: int, **_) -> list[str]:
    return [str(r) for r in sorted((int(x) for x in lines), key=lambda r: r & _MASK32)]


def ljoin(lines: list[str], n: int, **_) -> list[str]:
    recs = [int(x) for x in lines]
    a, b = recs[:n], recs[n:]
    out = []
    for ra in a:
        for rb in b:
            match = (ra & _MASK32) == (rb & _MASK32)
            out.append(str(((ra & _MASK64) | ((rb & _MASK64) << 64)) if match else 0))
    return out


def mvmul(lines: list[str], n: int, **_) -> list[str]:
    vals = [int(x) for x in lines]
    m = [vals[i * n:(i + 1) * n] for i in range(n)]
    x = vals[n * n:]
    return [str(sum(m[i][j] * x[j] for j in range(n)) & 0xFFFFFFFF) for i in range(n)]


def binfclayer(lines: list[str], n: int, params: dict | None = None, **_) -> list[str]:
    batch = int((params or {}).get("batch", n))
    vals = [int(x) for x in lines]
    weights, xs = vals[:n], vals[n:n + batch]
    out = []
    for x in xs:
        for w in weights:
            agree = n - bin(w ^ x).count("1")
            out.append("1" if agree >= n // 2 else "0")
    return out


# --- leveled-batch workloads ------------------------------------------------


def _fx(text: str) -> int:
    return round(Fraction(text) * (1 << FRAC_BITS))


def _row(line: str, dim: int) -> list[int]:
    vals = [_fx(t) for t in line.replace(",", " ").split()]
    return vals + [0] * (dim - len(vals))


def _rescale(v: int) -> int:
    return (v + (1 << (FRAC_BITS - 1))) >> FRAC_BITS


def _const(c: Fraction) -> int:
    return round(c * (1 << FRAC_BITS))


def _fmt(v: int) -> str:
    with localcontext() as ctx:
        ctx.prec = 80
        d = (Decimal(v) / Decimal(1 << FRAC_BITS)).normalize()
    s = format(d, "f")
    return "0" if s in ("-0", "0") else s


def _fmt_row(row: list[int]) -> str:
    return " ".join(_fmt(v) for v in row)


def rsum(lines: list[str], n: int, dimension: int, **_) -> list[str]:
    rows = [_row(x, dimension) for x in lines]
    return [_fmt_row([sum(col) for col in zip(*rows)])]


def rstats(lines: list[str], n: int, dimension: int, **_) -> list[str]:
    rows = [_row(x, dimension) for x in lines]
    inv, neg_inv = _const(Fraction(1, n)), _const(Fraction(-1, n))
    means, variances = [], []
    for col in zip(*rows):
        total = sum(col)
        sq = _rescale(sum(v * v for v in col))
        ex2 = _rescale(sq * inv)
        mean = _rescale(total * inv)
        neg = _rescale(total * neg_inv)
        means.append(mean)
        variances.append(ex2 + _rescale(mean * neg))
    return [_fmt_row(means), _fmt_row(variances)]


def _matrix(rows, n, offset, dim):
    return [[rows[offset + i * n + j] for j in range(n)] for i in range(n)]


def rmvmul(lines: list[str], n: int, dimension: int, **_) -> list[str]:
    rows = [_row(x, dimension) for x in lines]
    m = _matrix(rows, n, 0, dimension)
    x = rows[n * n:]
    out = []
    for i in range(n):
        out.append(_fmt_row([
            _rescale(sum(m[i][j][s] * x[j][s] for j in range(n))) for s in range(dimension)
        ]))
    return out


def rmatmul(lines: list[str], n: int, dimension: int, **_) -> list[str]:
    rows = [_row(x, dimension) for x in lines]
    a = _matrix(rows, n, 0, dimension)
    b = _matrix(rows, n, n * n, dimension)
    out = []
    for i in range(n):
        for j in range(n):
            out.append(_fmt_row([
                _rescale(sum(a[i][k][s] * b[k][j][s] for k in range(n))) for s in range(dimension)
            ]))
    return out


ORACLES = {
    "merge": merge,
    "sort": sort,
    "ljoin": ljoin,
    "mvmul": mvmul,
    "binfclayer": binfclayer,
    "rsum": rsum,
    "rstats": rstats,
    "rmvmul": rmvmul,
    "n_rmatmul": rmatmul,
    "t_rmatmul": rmatmul,
}
