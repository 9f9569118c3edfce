"""Randomized generators and point-level reference semantics for the set kernel.

The reference side works purely on enumerated Python sets of tuples, so a
bug in the symbolic constraint algebra cannot hide in the oracle.
"""

from __future__ import annotations

import random

from polydist.isets import (
    AffineExpr,
    Constraint,
    DivTerm,
    IntMap,
    IntSet,
    Space,
    eq0,
    ge0,
)

MAX_POINTS = 250


def random_space(rng: random.Random, name: str, max_dims: int = 4) -> Space:
    n = rng.randint(1, max_dims)
    return Space(name, tuple(f"{name}{i}" for i in range(n)))


def random_expr(rng: random.Random, arity: int, allow_div: bool = True) -> AffineExpr:
    coeffs = tuple(rng.choice([-2, -1, -1, 0, 0, 1, 1, 2]) for _ in range(arity))
    const = rng.randint(-6, 6)
    divs = ()
    if allow_div and arity and rng.random() < 0.25:
        inner = AffineExpr(
            tuple(rng.choice([-1, 0, 1]) for _ in range(arity)), rng.randint(-3, 3)
        )
        if not inner.is_constant():
            divs = (DivTerm(rng.choice([-1, 1]), inner, rng.choice([2, 3, 4, 8])),)
    return AffineExpr(coeffs, const, divs)


def random_set(rng: random.Random, space: Space, max_extent: int = 10) -> IntSet:
    """A random bounded set: a box per piece plus a few extra constraints."""
    n = space.arity
    pieces = []
    for _ in range(rng.randint(1, 2)):
        cons: list[Constraint] = []
        volume = 1
        for d in range(n):
            lo = rng.randint(-3, 3)
            hi = lo + rng.randint(0, max_extent - 1)
            while volume * (hi - lo + 1) > MAX_POINTS and hi > lo:
                hi -= 1
            volume *= hi - lo + 1
            cons.append(ge0(AffineExpr.var(n, d).plus_const(-lo)))
            cons.append(ge0(AffineExpr.var(n, d, -1).plus_const(hi)))
        for _ in range(rng.randint(0, 1)):
            expr = random_expr(rng, n)
            cons.append(eq0(expr) if rng.random() < 0.25 else ge0(expr))
        pieces.append(cons)
    return IntSet.make(space, pieces)


def random_map(rng: random.Random, dom: Space, ran: Space, max_extent: int = 8) -> IntMap:
    """A random bounded relation over dom x ran."""
    base = random_set(rng, Space("mr", dom.dims + tuple(f"{d}'" for d in ran.dims)), max_extent)
    return IntMap(dom, ran, base.pieces)


def random_functional_map(rng: random.Random, dom: Space, ran: Space) -> IntMap:
    exprs = [random_expr(rng, dom.arity, allow_div=rng.random() < 0.3) for _ in range(ran.arity)]
    return IntMap.from_exprs(dom, ran, exprs, check=False)


# -- reference semantics on enumerated points --------------------------------


def run_algebra_case(seed: int) -> None:
    """One randomized algebra case; raises AssertionError on divergence.

    Every case checks the set algebra; the relation checks (apply,
    compose, inverse) rotate by seed so a batch of cases covers each of
    them several hundred times.
    """
    from polydist.isets import (
        apply,
        compose,
        enumerate_set,
        intersect,
        inverse,
        is_empty,
        lexmax,
        lexmin,
        subtract,
        union,
    )

    rng = random.Random(seed)
    space = random_space(rng, "s")
    a = random_set(rng, space)
    b = random_set(rng, space)
    ea, eb = set(enumerate_set(a)), set(enumerate_set(b))

    assert set(enumerate_set(intersect(a, b))) == (ea & eb)
    assert set(enumerate_set(union(a, b))) == (ea | eb)
    assert set(enumerate_set(subtract(a, b))) == (ea - eb)
    assert is_empty(a) == (not ea)
    if ea:
        assert lexmin(a) == min(ea)
        assert lexmax(a) == max(ea)

    ran = random_space(rng, "r", max_dims=3)
    m = random_map(rng, space, ran, max_extent=4)
    pairs = enumerate_set(m.as_set())
    which = seed % 3
    if which == 0:
        assert set(enumerate_set(apply(m, a))) == set(ref_apply(pairs, ea, space.arity))
    elif which == 1:
        g = random_map(rng, ran, random_space(rng, "t", max_dims=2), max_extent=3)
        g_pairs = enumerate_set(g.as_set())
        comp = compose(g, m)
        assert set(enumerate_set(comp.as_set())) == set(
            ref_compose(pairs, g_pairs, space.arity, ran.arity)
        )
    else:
        inv = inverse(m)
        assert set(enumerate_set(inv.as_set())) == {
            p[space.arity :] + p[: space.arity] for p in pairs
        }


def ref_apply(map_pairs, points, n_in):
    points = set(points)
    return sorted({p[n_in:] for p in map_pairs if p[:n_in] in points})


def ref_compose(f_pairs, g_pairs, na, nb):
    out = set()
    g_by_in = {}
    for p in g_pairs:
        g_by_in.setdefault(p[:nb], []).append(p[nb:])
    for p in f_pairs:
        for out_part in g_by_in.get(p[na:], []):
            out.add(p[:na] + out_part)
    return sorted(out)


def ref_closure(pairs, n):
    pairs = {(p[:n], p[n:]) for p in pairs}
    closure = set(pairs)
    while True:
        new = {(a, d) for a, b in closure for c, d in pairs if b == c} - closure
        if not new:
            return sorted(a + b for a, b in closure)
        closure |= new
