"""Chunking functions: group consumer instances so their communicated
values travel in one aggregated message per chunk.

The heuristic walks scatter-prefix lengths outward-in.  A prefix length
qualifies when (1) every producer's scatter prefix is strictly
lexicographically below its consumers' (prefix length 0 instead demands
that every producer in the family runs before every consumer), and
(2) collapsing the consumer's instances to their representatives leaves
the transitive dependence relation irreflexive.  Representatives keep the
domain dims that appear in the qualifying scatter prefix and zero the
rest.  When no prefix length qualifies the identity chunking is used:
every value travels alone.

Validity checks run on the enumerated instance graph: collapsing is a
graph quotient and cycle detection there is exact on these finite scops.
The symbolic transitive closure in the set kernel is the test-side
cross-check for this, on small relations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .deps import DepGraph, FlowFamily
from .isets import (
    AffineExpr,
    IntMap,
    IntSet,
    Space,
    apply,
    enumerate_set,
    eq0,
    ge0,
    is_empty,
    lexmax,
    lexmin,
    project_pieces,
)
from .scop import Scop, Statement
from .syntax import format_map

__all__ = ["ChunkingFn", "chunk_heuristic", "validate_chunking", "chunk_all", "dump_chunks"]


@dataclass(frozen=True)
class ChunkingFn:
    """Idempotent projection of one consumer statement's instances."""

    consumer: str
    level: Optional[int]  # prefix length; None means the identity fallback
    kept_dims: tuple[int, ...]
    space: Space

    @property
    def is_identity(self) -> bool:
        return self.level is None or len(self.kept_dims) == self.space.arity

    def apply_point(self, point) -> tuple[int, ...]:
        if self.level is None:
            return tuple(point)
        return tuple(v if d in self.kept_dims else 0 for d, v in enumerate(point))

    def as_map(self) -> IntMap:
        n = self.space.arity
        exprs = []
        for d in range(n):
            if self.level is None or d in self.kept_dims:
                exprs.append(AffineExpr.var(n, d))
            else:
                exprs.append(AffineExpr.constant(n, 0))
        return IntMap.from_exprs(self.space, self.space.renamed(self.consumer), exprs, check=False)


# ---------------------------------------------------------------------------
# Instance-graph machinery


def _instance_graph(dep: DepGraph):
    """Adjacency over enumerated instances of all direct flows (cached)."""
    cached = getattr(dep, "_instance_graph", None)
    if cached is not None:
        return cached
    adj: dict = {}
    for gid, ig, cid, ic in dep.instance_edges():
        adj.setdefault((gid, ig), []).append((cid, ic))
    setattr(dep, "_instance_graph", adj)
    return adj


def _collapsed_has_cycle(dep: DepGraph, phi: ChunkingFn) -> bool:
    """Cycle in the instance graph after quotienting by phi."""
    adj = _instance_graph(dep)

    def node_of(sid, pt):
        if sid == phi.consumer:
            return (sid, phi.apply_point(pt))
        return (sid, pt)

    quotient: dict = {}
    for (gid, ig), succs in adj.items():
        src = node_of(gid, ig)
        bucket = quotient.setdefault(src, set())
        for cid, ic in succs:
            bucket.add(node_of(cid, ic))
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict = {}
    for start in quotient:
        if color.get(start, WHITE) != WHITE:
            continue
        stack = [(start, iter(quotient.get(start, ())))]
        color[start] = GRAY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                c = color.get(nxt, WHITE)
                if c == GRAY:
                    return True
                if c == WHITE:
                    color[nxt] = GRAY
                    stack.append((nxt, iter(quotient.get(nxt, ()))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return False


def validate_chunking(phi: ChunkingFn, dep: DepGraph) -> bool:
    """True iff applying phi to both sides of the transitive closure of all
    flows yields an irreflexive relation: no dependence path may connect
    two instances of the same chunk."""
    adj = _instance_graph(dep)
    chunks: dict = {}
    for s in dep.scop.statements:
        if s.id != phi.consumer:
            continue
        for pt in enumerate_set(s.domain):
            chunks.setdefault(phi.apply_point(pt), set()).add(pt)
    for members in chunks.values():
        if len(members) < 1:
            continue
        # any path of length >= 1 from a member to a member invalidates phi
        frontier = []
        seen = set()
        for pt in members:
            for nxt in adj.get((phi.consumer, pt), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        while frontier:
            sid, pt = frontier.pop()
            if sid == phi.consumer and pt in members:
                return False
            for nxt in adj.get((sid, pt), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
    return True


# ---------------------------------------------------------------------------
# The heuristic


def _strict_prefix_holds(scop: Scop, fam: FlowFamily, level: int) -> bool:
    """Every family pair: producer scatter prefix strictly below consumer's."""
    prod = scop.statement(fam.producer)
    cons = scop.statement(fam.consumer)
    n_g, n_c, n_k = fam.n_prod, fam.n_cons, fam.n_elem
    arity = n_g + n_c + n_k
    theta_g = [e.remap(list(range(n_g)), arity) for e in prod.schedule_exprs]
    theta_c = [e.remap([n_g + i for i in range(n_c)], arity) for e in cons.schedule_exprs]
    # violation: NOT (prefix_l(theta_g) <lex prefix_l(theta_c))
    violation_alternatives = []
    eq_all = [eq0(theta_g[t] - theta_c[t]) for t in range(level)]
    violation_alternatives.append(eq_all)
    for t in range(level):
        alt = [eq0(theta_g[u] - theta_c[u]) for u in range(t)]
        alt.append(ge0(theta_g[t] - theta_c[t].plus_const(1)))
        violation_alternatives.append(alt)
    for piece in fam.rel.pieces:
        for alt in violation_alternatives:
            bad = IntSet.make(fam.rel.space, [tuple(piece) + tuple(alt)], check=False)
            if not is_empty(bad):
                return False
    return True


def _global_order_holds(scop: Scop, fam: FlowFamily) -> bool:
    """All producers of the family run before all of its consumers."""
    prod = scop.statement(fam.producer)
    cons = scop.statement(fam.consumer)
    arity = fam.n_prod + fam.n_cons + fam.n_elem
    prod_set = IntSet.make(
        Space(fam.producer, fam.prod_space.dims),
        project_pieces(arity, fam.rel.pieces, list(range(fam.n_prod, arity))),
        check=False,
    )
    cons_set = IntSet.make(
        Space(fam.consumer, fam.cons_space.dims),
        project_pieces(
            arity,
            fam.rel.pieces,
            list(range(fam.n_prod)) + list(range(fam.n_prod + fam.n_cons, arity)),
        ),
        check=False,
    )
    sched = scop.scatter_space
    tg = apply(prod.schedule(sched), IntSet(prod.space, prod_set.pieces))
    tc = apply(cons.schedule(sched), IntSet(cons.space, cons_set.pieces))
    return lexmax(tg) < lexmin(tc)


def _kept_dims(cons: Statement, level: int) -> tuple[int, ...]:
    kept = set()
    for expr in cons.schedule_exprs[:level]:
        for d, coeff in enumerate(expr.coeffs):
            if coeff != 0:
                kept.add(d)
    return tuple(sorted(kept))


def chunk_heuristic(fam: FlowFamily, dep: DepGraph) -> ChunkingFn:
    """Smallest qualifying scatter-prefix length, or the identity fallback."""
    scop = dep.scop
    cons = scop.statement(fam.consumer)
    n_t = scop.scatter_arity
    for level in range(0, n_t):
        if level == 0:
            if not _global_order_holds(scop, fam):
                continue
        elif not _strict_prefix_holds(scop, fam, level):
            continue
        phi = ChunkingFn(
            consumer=fam.consumer,
            level=level,
            kept_dims=_kept_dims(cons, level),
            space=cons.space,
        )
        if _collapsed_has_cycle(dep, phi):
            continue
        return phi
    return ChunkingFn(
        consumer=fam.consumer,
        level=None,
        kept_dims=tuple(range(cons.arity)),
        space=cons.space,
    )


def chunk_all(dep: DepGraph) -> dict:
    """Chunking function per intra-scop field family, keyed like families."""
    out = {}
    for fam in dep.intra_field_families():
        out[(fam.producer, fam.consumer, fam.ref)] = chunk_heuristic(fam, dep)
    return out


def dump_chunks(dep: DepGraph, chunkings: dict) -> str:
    lines = []
    for (producer, consumer, ref), phi in sorted(
        chunkings.items(), key=lambda kv: (kv[0][1], kv[0][0], kv[0][2])
    ):
        level = "identity" if phi.level is None else str(phi.level)
        lines.append(f"chunk {consumer} level={level} phi={format_map(phi.as_map())}")
    return "\n".join(lines) + "\n"
