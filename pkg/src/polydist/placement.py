"""Data and computation placement: block distribution plus owner-computes.

Field elements get home nodes by block distribution.  Statement instances
get executing nodes in three passes: statements whose writes reach the
epilogue are pinned to the written element's home (owner computes);
scalar co-location then propagates consumer nodes into producers until a
fixpoint; statements still unplaced are seeded at the homes of the
elements they read from the prologue, and as a last resort adopt the
lexicographically smallest node any dependence neighbor runs on.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import IndivisibleExtent, UnsatisfiablePlacement, ValidationError
from .deps import DepGraph, FlowFamily
from .isets import (
    AffineExpr,
    DivTerm,
    IntMap,
    IntSet,
    apply,
    embed_pieces,
    compose,
    enumerate_set,
    is_empty,
    map_domain,
    map_is_empty,
    map_subtract,
    map_union,
    select_lex_extreme,
    subtract,
)
from .scop import ClusterGrid, Scop, Statement
from .syntax import format_map

__all__ = ["FieldPlacement", "StmtPlacement", "block_distribute", "place_statements", "dump_placements"]


@dataclass(frozen=True)
class FieldPlacement:
    """Home location map per field, plus the block shape that produced it."""

    maps: dict  # field name -> IntMap (indexset -> grid)
    block_extents: dict  # field name -> tuple of block sizes

    def homes(self, field: str, index) -> list[tuple[int, ...]]:
        blocks = self.block_extents.get(field)
        if blocks is not None:
            return [tuple(v // b for v, b in zip(index, blocks))]
        m = self.maps[field]
        src = IntSet.from_points(m.dom, [tuple(index)])
        return enumerate_set(apply(m, src))


@dataclass(frozen=True)
class StmtPlacement:
    maps: dict  # statement id -> IntMap (domain -> grid)

    def nodes(self, stmt: str, point) -> list[tuple[int, ...]]:
        m = self.maps[stmt]
        src = IntSet.from_points(m.dom, [tuple(point)])
        return enumerate_set(apply(m, src))


def block_distribute(fields, grid: ClusterGrid) -> FieldPlacement:
    """pi(k) = floor(k_d / B_d) per dimension with B_d = extent_d / grid_d."""
    maps = {}
    blocks = {}
    for f in fields:
        if f.arity != grid.arity:
            raise ValidationError(
                f"field {f.name} has {f.arity} dims, grid has {grid.arity}"
            )
        bs = []
        for d, (ext, g) in enumerate(zip(f.extents, grid.extents)):
            if ext % g != 0:
                raise IndivisibleExtent(
                    f"field {f.name} dim {d}: extent {ext} not divisible by grid {g}"
                )
            bs.append(ext // g)
        n = f.arity
        exprs = [
            AffineExpr((0,) * n, 0, (DivTerm(1, AffineExpr.var(n, d), bs[d]),))
            for d in range(n)
        ]
        guards = []
        for p in f.indexset.pieces:
            guards = list(p)
            break
        maps[f.name] = IntMap.from_exprs(f.space, grid.space, exprs, guards, check=False)
        blocks[f.name] = tuple(bs)
    return FieldPlacement(maps=maps, block_extents=blocks)


def _access_to_grid(scop: Scop, s: Statement, acc, fp: FieldPlacement) -> IntMap:
    """Map statement instances to the home nodes of the accessed elements."""
    from .isets import restrict_domain

    fld = scop.field(acc.field)
    if acc.index_exprs is None:
        raise ValidationError("virtual accesses have no single placement map")
    access_map = IntMap.from_exprs(s.space, fld.space, list(acc.index_exprs), check=False)
    access_map = restrict_domain(access_map, s.domain)
    return compose(fp.maps[acc.field], access_map)


def _full_node_map(s: Statement, grid: ClusterGrid) -> IntMap:
    n_i, n_p = s.arity, grid.arity
    arity = n_i + n_p
    pieces = embed_pieces(s.domain.pieces, list(range(n_i)), arity)
    box = embed_pieces(grid.node_set.pieces, [n_i + i for i in range(n_p)], arity)
    combined = [p + q for p in pieces for q in box]
    return IntMap.make(s.space, grid.space, combined, check=False)


def place_statements(scop: Scop, dep: DepGraph, fp: FieldPlacement) -> StmtPlacement:
    grid = scop.grid
    placements: dict[str, IntMap] = {}
    pinned: set[str] = set()

    epilogue_writers = {f.producer for f in dep.epilogue_families()}
    for s in scop.statements:
        if s.is_virtual:
            placements[s.id] = _full_node_map(s, grid)
            pinned.add(s.id)
            continue
        if s.id in epilogue_writers and s.writes():
            _, acc = s.writes()[0]
            placements[s.id] = _access_to_grid(scop, s, acc, fp)
            pinned.add(s.id)

    # scalar co-location: producers run wherever their consumers run
    scalar_fams = dep.scalar_families()
    for _ in range(len(scop.statements) + 1):
        changed = False
        for fam in scalar_fams:
            consumer = placements.get(fam.consumer)
            if consumer is None:
                continue
            required = compose(consumer, fam.as_map())
            current = placements.get(fam.producer)
            if current is None:
                placements[fam.producer] = required
                changed = True
            elif not map_is_empty(map_subtract(required, current)):
                placements[fam.producer] = map_union(current, required)
                changed = True
        if not changed:
            break
    else:
        raise UnsatisfiablePlacement("scalar co-location did not reach a fixpoint")

    # prologue seeding for still-unplaced readers
    prologue_readers = {f.consumer for f in dep.prologue_families()}
    for s in scop.statements:
        if s.id in placements or s.id not in prologue_readers:
            continue
        if s.reads():
            _, acc = s.reads()[0]
            placements[s.id] = _access_to_grid(scop, s, acc, fp)

    # neighbor adoption for still-unplaced instances, lexmin node per instance
    from .isets import restrict_domain

    def missing_of(s):
        current = placements.get(s.id)
        if current is None:
            return s.domain
        dom = IntSet(s.domain.space, map_domain(current).pieces)
        return subtract(s.domain, dom)

    for _ in range(len(scop.statements) + 1):
        progressed = False
        for s in scop.statements:
            missing = missing_of(s)
            if is_empty(missing):
                continue
            candidates = None
            for fam in dep.families:
                if fam.consumer == s.id and fam.producer in placements:
                    got = compose(placements[fam.producer], _reverse_map(fam))
                elif fam.producer == s.id and fam.consumer in placements:
                    got = compose(placements[fam.consumer], fam.as_map())
                else:
                    continue
                candidates = got if candidates is None else map_union(candidates, got)
            if candidates is None:
                continue
            candidates = restrict_domain(candidates, missing)
            if map_is_empty(candidates):
                continue
            chosen = select_lex_extreme(candidates.as_set(), s.arity, maximize=False)
            add = IntMap(candidates.dom, candidates.ran, chosen.pieces)
            current = placements.get(s.id)
            placements[s.id] = add if current is None else map_union(current, add)
            progressed = True
        if not progressed:
            break

    # last resort: the smallest node, for instances no dependence reaches
    for s in scop.statements:
        missing = missing_of(s)
        if is_empty(missing):
            continue
        zero = [AffineExpr.constant(s.arity, 0) for _ in range(grid.arity)]
        fallback = restrict_domain(
            IntMap.from_exprs(s.space, grid.space, zero, check=False), missing
        )
        current = placements.get(s.id)
        placements[s.id] = fallback if current is None else map_union(current, fallback)

    # totality check
    for s in scop.statements:
        missing = missing_of(s)
        if not is_empty(missing):
            raise UnsatisfiablePlacement(
                f"{s.id}: instances without a node, e.g. {enumerate_set(missing)[:3]}"
            )
    return StmtPlacement(maps=placements)


def _reverse_map(fam: FlowFamily) -> IntMap:
    from .isets import inverse

    return inverse(fam.as_map())


def dump_placements(scop: Scop, fp: FieldPlacement, sp: StmtPlacement) -> str:
    lines = []
    for f in scop.fields:
        lines.append(f"pi {f.name} = {format_map(fp.maps[f.name])}")
    for s in scop.statements:
        lines.append(f"pi {s.id} = {format_map(sp.maps[s.id])}")
    return "\n".join(lines) + "\n"
