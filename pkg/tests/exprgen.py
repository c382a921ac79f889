"""Random expression generators with plaintext reference semantics.

Each generator returns a builder function plus the inputs to feed it and
the output lines the engine must produce.  The references use host
integers and share no code with the builder, engine or drivers.
"""

from __future__ import annotations

import random
from fractions import Fraction

from memprog.dsl import Batch, Integer, mux

FRAC = 20


# --- integer expressions ------------------------------------------------------


def random_int_program(rng: random.Random, n_exprs: int = 10, width_choices=(8, 16, 32)):
    """``n_exprs`` random integer expressions in one program."""
    plan = []
    inputs: list[int] = []
    expected: list[str] = []
    for _ in range(n_exprs):
        w = rng.choice(width_choices)
        leaves = [rng.getrandbits(w) for _ in range(rng.randint(2, 4))]
        tree = _int_tree(rng, len(leaves), depth=rng.randint(1, 4))
        plan.append((w, len(leaves), tree))
        inputs.extend(leaves)
        expected.append(str(_int_eval(tree, leaves, w)))

    def program(opts) -> None:
        for w, k, tree in plan:
            xs = [Integer(w).mark_input() for _ in range(k)]
            _int_build(tree, xs, w).mark_output()

    return program, [str(v) for v in inputs], expected


_BIN = ("add", "sub", "and", "xor", "or")
_UN = ("not", "shl", "shr", "inc")


def _int_tree(rng: random.Random, n_leaves: int, depth: int):
    if depth == 0 or rng.random() < 0.2:
        return ("leaf", rng.randrange(n_leaves))
    r = rng.random()
    if r < 0.55:
        return (rng.choice(_BIN), _int_tree(rng, n_leaves, depth - 1), _int_tree(rng, n_leaves, depth - 1))
    if r < 0.8:
        kind = rng.choice(_UN)
        k = rng.randint(0, 9) if kind in ("shl", "shr") else 0
        return (kind, k, _int_tree(rng, n_leaves, depth - 1))
    cmp = rng.choice(("ge", "eq"))
    return ("mux", cmp,
            _int_tree(rng, n_leaves, depth - 1), _int_tree(rng, n_leaves, depth - 1),
            _int_tree(rng, n_leaves, depth - 1), _int_tree(rng, n_leaves, depth - 1))


def _int_eval(t, leaves, w) -> int:
    m = (1 << w) - 1
    kind = t[0]
    if kind == "leaf":
        return leaves[t[1]]
    if kind in _BIN:
        a, b = _int_eval(t[1], leaves, w), _int_eval(t[2], leaves, w)
        return {"add": a + b, "sub": a - b, "and": a & b, "xor": a ^ b, "or": a | b}[kind] & m
    if kind in _UN:
        a = _int_eval(t[2], leaves, w)
        return {"not": ~a, "shl": a << t[1], "shr": a >> t[1], "inc": a + 1}[kind] & m
    _, cmp, x, y, p, q = t
    xv, yv = _int_eval(x, leaves, w), _int_eval(y, leaves, w)
    sel = xv >= yv if cmp == "ge" else xv == yv
    return _int_eval(p, leaves, w) if sel else _int_eval(q, leaves, w)


def _int_build(t, xs, w) -> Integer:
    kind = t[0]
    if kind == "leaf":
        return xs[t[1]]
    if kind in _BIN:
        a, b = _int_build(t[1], xs, w), _int_build(t[2], xs, w)
        if kind == "add":
            return a + b
        if kind == "sub":
            return a - b
        if kind == "and":
            return a & b
        if kind == "xor":
            return a ^ b
        return a | b
    if kind in _UN:
        a = _int_build(t[2], xs, w)
        if kind == "not":
            return ~a
        if kind == "shl":
            return a << t[1]
        if kind == "shr":
            return a >> t[1]
        return a.increment()
    _, cmp, x, y, p, q = t
    xv, yv = _int_build(x, xs, w), _int_build(y, xs, w)
    sel = (xv >= yv) if cmp == "ge" else xv.eq(yv)
    return mux(sel, _int_build(p, xs, w), _int_build(q, xs, w))


# --- batch expression DAGs ----------------------------------------------------


def _fx(x: Fraction) -> int:
    return round(x * (1 << FRAC))


def _rescale(v: int) -> int:
    return (v + (1 << (FRAC - 1))) >> FRAC


def _fmt(v: int) -> str:
    x = Fraction(v, 1 << FRAC)
    if x.denominator == 1:
        return str(x.numerator)
    # denominators are powers of two, so the decimal expansion terminates
    sign = "-" if x < 0 else ""
    x = abs(x)
    whole = x.numerator // x.denominator
    frac = x - whole
    digits = ""
    while frac:
        frac *= 10
        d = frac.numerator // frac.denominator
        digits += str(d)
        frac -= d
    return f"{sign}{whole}.{digits}"


def random_batch_dag(rng: random.Random, dim: int, max_level: int = 2, n_inputs: int = 3,
                     n_ops: int = 8):
    """A random DAG of batch operations and its reference evaluation.

    Returns (program, inputs, expected_outputs, node_states) where
    node_states lists the reference (level, relinearized) of every node in
    creation order, for checking the builder's level algebra.
    """
    # reference node: (level, relin, slot values as fixed-point ints)
    nodes = []
    steps = []
    rows = []
    for _ in range(n_inputs):
        vals = [Fraction(rng.randint(-32, 32), 16) for _ in range(dim)]
        rows.append(" ".join(str(v.numerator / v.denominator) for v in vals))
        nodes.append((max_level, True, [_fx(v) for v in vals]))
        steps.append(("in",))
    for _ in range(n_ops):
        choices = []
        for i, (lv, rl, _) in enumerate(nodes):
            for j, (lv2, rl2, _) in enumerate(nodes):
                if lv == lv2 and rl == rl2:
                    choices.append(("add", i, j))
                if lv == lv2 and rl and rl2 and lv >= 1:
                    choices.append(("mul", i, j))
            if not rl:
                choices.append(("relin", i))
            choices.append(("add_plain", i, Fraction(rng.randint(-8, 8), 4)))
            if rl and lv >= 1:
                choices.append(("mul_plain", i, Fraction(rng.randint(-8, 8), 4)))
        op = rng.choice(choices)
        steps.append(op)
        nodes.append(_batch_eval(op, nodes))
    outs = [i for i, (_, rl, _) in enumerate(nodes) if rl and i >= n_inputs]
    if not outs:
        outs = [len(nodes) - 1] if nodes[-1][1] else [0]
    expected = [" ".join(_fmt(v) for v in nodes[i][2]) for i in outs]
    states = [(lv, rl) for lv, rl, _ in nodes]

    def program(opts) -> None:
        handles = []
        built = []
        for step in steps:
            kind = step[0]
            if kind == "in":
                h = Batch().mark_input()
            elif kind == "add":
                h = handles[step[1]] + handles[step[2]]
            elif kind == "mul":
                h = handles[step[1]] * handles[step[2]]
            elif kind == "relin":
                h = handles[step[1]].relin_rescale()
            elif kind == "add_plain":
                h = handles[step[1]].add_plain(step[2])
            else:
                h = handles[step[1]].mul_plain(step[2])
            handles.append(h)
            built.append((h.level, h.relinearized))
        program.built_states = built
        for i in outs:
            handles[i].mark_output()

    return program, rows, expected, states


def _batch_eval(op, nodes):
    kind = op[0]
    if kind == "add":
        a, b = nodes[op[1]], nodes[op[2]]
        return (a[0], a[1], [x + y for x, y in zip(a[2], b[2])])
    if kind == "mul":
        a, b = nodes[op[1]], nodes[op[2]]
        return (a[0], False, [x * y for x, y in zip(a[2], b[2])])
    if kind == "relin":
        a = nodes[op[1]]
        return (a[0] - 1, True, [_rescale(x) for x in a[2]])
    if kind == "add_plain":
        a = nodes[op[1]]
        c = _fx(op[2]) << (0 if a[1] else FRAC)
        return (a[0], a[1], [x + c for x in a[2]])
    a = nodes[op[1]]
    c = _fx(op[2])
    return (a[0] - 1, True, [_rescale(x * c) for x in a[2]])
