"""SCoP intermediate representation: statements, domains, schedules, accesses.

Also home to the two source-level transformations that do not need any
dependence information: access isolation (at most one field access per
statement afterwards) and the sequential reference executor that the
distributed simulator is verified against.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import EvaluationError, ValidationError
from .exprs import (
    PureFunction,
    eval_expr,
    expr_access_reads,
    expr_scalar_reads,
    validate_expr,
)
from .isets import (
    AffineExpr,
    IntMap,
    IntSet,
    Space,
    enumerate_set,
    piece_box,
)

__all__ = [
    "FieldDecl",
    "AccessRef",
    "Statement",
    "ClusterGrid",
    "Scop",
    "isolate_accesses",
    "sequential_execute",
]

ELEMENT_DTYPES = {"bool": np.bool_, "int64": np.int64, "float64": np.float64}


@dataclass(frozen=True)
class FieldDecl:
    """A distributed array; its index set is the zero-based box of extents."""

    name: str
    element_type: str
    extents: tuple[int, ...]

    def __post_init__(self):
        if self.element_type not in ELEMENT_DTYPES:
            raise ValidationError(f"field {self.name}: unknown element type {self.element_type}")
        if not self.extents or any(e < 1 for e in self.extents):
            raise ValidationError(f"field {self.name}: extents must all be >= 1")

    @property
    def arity(self) -> int:
        return len(self.extents)

    @property
    def space(self) -> Space:
        return Space(self.name, tuple(f"k{i}" for i in range(self.arity)))

    @property
    def indexset(self) -> IntSet:
        return IntSet.from_box(self.space, [(0, e - 1) for e in self.extents])

    @property
    def dtype(self):
        return ELEMENT_DTYPES[self.element_type]


@dataclass(frozen=True)
class AccessRef:
    """One field access of a statement; index_exprs is None only for the
    virtual prologue/epilogue accesses that touch the whole field."""

    field: str
    kind: str  # "read" | "write"
    index_exprs: Optional[tuple[AffineExpr, ...]]

    def __post_init__(self):
        if self.kind not in ("read", "write"):
            raise ValidationError(f"access kind must be read or write, got {self.kind!r}")


@dataclass(frozen=True)
class Statement:
    id: str
    domain: IntSet
    schedule_exprs: tuple[AffineExpr, ...]
    accesses: tuple[AccessRef, ...] = ()
    body: Optional[object] = None
    scalar_reads: tuple[str, ...] = ()
    scalar_writes: tuple[str, ...] = ()
    is_virtual: bool = False

    @property
    def space(self) -> Space:
        return self.domain.space

    @property
    def arity(self) -> int:
        return self.domain.arity

    def schedule(self, scatter_space: Space) -> IntMap:
        return IntMap.from_exprs(self.space, scatter_space, self.schedule_exprs, check=False)

    def scatter_of(self, point: Sequence[int]) -> tuple[int, ...]:
        return tuple(e.evaluate(point) for e in self.schedule_exprs)

    def reads(self) -> list[tuple[int, AccessRef]]:
        return [(j, a) for j, a in enumerate(self.accesses) if a.kind == "read"]

    def writes(self) -> list[tuple[int, AccessRef]]:
        return [(j, a) for j, a in enumerate(self.accesses) if a.kind == "write"]


@dataclass(frozen=True)
class ClusterGrid:
    extents: tuple[int, ...]

    def __post_init__(self):
        if any(e < 1 for e in self.extents):
            raise ValidationError("grid extents must all be >= 1")

    @property
    def arity(self) -> int:
        return len(self.extents)

    @property
    def node_count(self) -> int:
        n = 1
        for e in self.extents:
            n *= e
        return n

    @property
    def space(self) -> Space:
        return Space("P", tuple(f"p{i}" for i in range(self.arity)))

    @property
    def nodes(self) -> list[tuple[int, ...]]:
        import itertools

        return sorted(itertools.product(*[range(e) for e in self.extents]))

    @property
    def node_set(self) -> IntSet:
        return IntSet.from_box(self.space, [(0, e - 1) for e in self.extents])


@dataclass(frozen=True)
class Scop:
    name: str
    fields: tuple[FieldDecl, ...]
    statements: tuple[Statement, ...]
    scatter_arity: int
    grid: ClusterGrid
    functions: dict[str, PureFunction] = field(default_factory=dict)

    @property
    def scatter_space(self) -> Space:
        return Space("T", tuple(f"t{i}" for i in range(self.scatter_arity)))

    def field(self, name: str) -> FieldDecl:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def statement(self, sid: str) -> Statement:
        for s in self.statements:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def real_statements(self) -> list[Statement]:
        return [s for s in self.statements if not s.is_virtual]

    def validate(self) -> None:
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate field names")
        ids = [s.id for s in self.statements]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate statement ids")
        for fn in self.functions.values():
            validate_expr(fn.body, set(fn.params), 0, self.functions)
        seen_scatter: dict[tuple[int, ...], tuple[str, tuple[int, ...]]] = {}
        for s in self.statements:
            self._validate_statement(s)
            for point in enumerate_set(s.domain):
                t = s.scatter_of(point)
                if t in seen_scatter:
                    other = seen_scatter[t]
                    raise ValidationError(
                        f"schedule not injective: {s.id}{point} and "
                        f"{other[0]}{other[1]} share scatter {t}"
                    )
                seen_scatter[t] = (s.id, point)

    def _validate_statement(self, s: Statement) -> None:
        if len(s.schedule_exprs) != self.scatter_arity:
            raise ValidationError(
                f"{s.id}: schedule arity {len(s.schedule_exprs)} != scatter arity "
                f"{self.scatter_arity}"
            )
        writes = s.writes()
        if len(writes) > 1:
            raise ValidationError(f"{s.id}: more than one write access")
        for acc in s.accesses:
            try:
                fld = self.field(acc.field)
            except KeyError:
                raise ValidationError(f"{s.id}: access to undeclared field {acc.field!r}")
            if acc.index_exprs is None:
                if not s.is_virtual:
                    raise ValidationError(f"{s.id}: whole-field access on a real statement")
                continue
            if len(acc.index_exprs) != fld.arity:
                raise ValidationError(
                    f"{s.id}: access to {fld.name} has {len(acc.index_exprs)} indexes, "
                    f"field has {fld.arity} dimensions"
                )
            if any(e.divs for e in acc.index_exprs):
                raise ValidationError(f"{s.id}: access index expressions must be affine")
            self._check_in_bounds(s, acc, fld)
        if s.body is not None:
            scalars = set(s.scalar_reads) | set(s.scalar_writes)
            validate_expr(s.body, scalars, len(s.accesses), self.functions)
            actual_reads = expr_scalar_reads(s.body, set())
            bad = actual_reads - set(s.scalar_reads) - set(s.scalar_writes)
            if bad:
                raise ValidationError(f"{s.id}: body reads undeclared scalars {sorted(bad)}")
            for j in expr_access_reads(s.body, set()):
                if s.accesses[j].kind != "read":
                    raise ValidationError(f"{s.id}: body references write access {j}")
        elif not s.is_virtual and (s.writes() or s.scalar_writes):
            raise ValidationError(f"{s.id}: writing statement has no body")

    def _check_in_bounds(self, s: Statement, acc: AccessRef, fld: FieldDecl) -> None:
        for piece in s.domain.pieces:
            box = piece_box(s.arity, piece)
            if box is None:
                continue
            for d, e in enumerate(acc.index_exprs):
                lo = hi = e.const
                for i, c in enumerate(e.coeffs):
                    if c > 0:
                        lo += c * box[i][0]
                        hi += c * box[i][1]
                    elif c < 0:
                        lo += c * box[i][1]
                        hi += c * box[i][0]
                if lo < 0 or hi >= fld.extents[d]:
                    # interval bound is exact on box pieces; fall back to
                    # point check for non-box pieces before rejecting
                    if self._really_out_of_bounds(s, acc, fld):
                        raise ValidationError(
                            f"{s.id}: access {fld.name}[dim {d}] out of bounds "
                            f"(range [{lo}, {hi}], extent {fld.extents[d]})"
                        )
                    return

    def _really_out_of_bounds(self, s: Statement, acc: AccessRef, fld: FieldDecl) -> bool:
        for point in enumerate_set(s.domain):
            idx = tuple(e.evaluate(point) for e in acc.index_exprs)
            if any(not 0 <= v < ext for v, ext in zip(idx, fld.extents)):
                return True
        return False


# ---------------------------------------------------------------------------
# Access isolation


def _is_atomic(body) -> bool:
    return body[0] in ("var", "int", "float", "bool", "access")


def _rewrite_accesses(node, renames: dict[int, str]):
    if node[0] == "access" and node[1] in renames:
        return ["var", renames[node[1]]]
    if node[0] in ("int", "float", "bool", "var", "access"):
        return list(node)
    if node[0] == "call":
        return [node[0], node[1]] + [_rewrite_accesses(c, renames) for c in node[2:]]
    return [node[0]] + [_rewrite_accesses(c, renames) for c in node[1:]]


def isolate_accesses(scop: Scop) -> Scop:
    """Split statements so each carries at most one field access.

    Values flowing between the split parts become fresh scalars named
    ``<id>.v<n>``.  Schedules gain one trailing ordinal dimension: the
    1-based child position for split statements, 0 for statements that
    were already isolated. Sequential semantics are unchanged.
    """
    out: list[Statement] = []
    existing_ids = {s.id for s in scop.statements}
    for s in scop.statements:
        pad_zero = s.schedule_exprs + (AffineExpr.constant(s.arity, 0),)
        if s.is_virtual or len(s.accesses) <= 1:
            out.append(replace(s, schedule_exprs=pad_zero))
            continue
        reads = s.reads()
        writes = s.writes()
        children: list[Statement] = []
        renames: dict[int, str] = {}
        fresh_n = 0
        for j, acc in reads:
            fresh_n += 1
            vname = f"{s.id}.v{fresh_n}"
            renames[j] = vname
            children.append(
                Statement(
                    id="",
                    domain=s.domain,
                    schedule_exprs=s.schedule_exprs,
                    accesses=(acc,),
                    body=["access", 0],
                    scalar_reads=(),
                    scalar_writes=(vname,),
                )
            )
        body = _rewrite_accesses(s.body, renames)
        body_reads = tuple(sorted(expr_scalar_reads(body, set())))
        if writes:
            _, wacc = writes[0]
            if _is_atomic(body):
                children.append(
                    Statement(
                        id="",
                        domain=s.domain,
                        schedule_exprs=s.schedule_exprs,
                        accesses=(wacc,),
                        body=body,
                        scalar_reads=body_reads,
                        scalar_writes=s.scalar_writes,
                    )
                )
            else:
                fresh_n += 1
                vname = f"{s.id}.v{fresh_n}"
                children.append(
                    Statement(
                        id="",
                        domain=s.domain,
                        schedule_exprs=s.schedule_exprs,
                        accesses=(),
                        body=body,
                        scalar_reads=body_reads,
                        scalar_writes=(vname,) + s.scalar_writes,
                    )
                )
                children.append(
                    Statement(
                        id="",
                        domain=s.domain,
                        schedule_exprs=s.schedule_exprs,
                        accesses=(wacc,),
                        body=["var", vname],
                        scalar_reads=(vname,),
                        scalar_writes=(),
                    )
                )
        else:
            children.append(
                Statement(
                    id="",
                    domain=s.domain,
                    schedule_exprs=s.schedule_exprs,
                    accesses=(),
                    body=body,
                    scalar_reads=body_reads,
                    scalar_writes=s.scalar_writes,
                )
            )
        for pos, child in enumerate(children, start=1):
            cid = f"{s.id}.{pos}"
            if cid in existing_ids:
                raise ValidationError(f"isolation id collision: {cid}")
            dom = IntSet(Space(cid, s.space.dims), child.domain.pieces)
            out.append(
                replace(
                    child,
                    id=cid,
                    domain=dom,
                    schedule_exprs=child.schedule_exprs
                    + (AffineExpr.constant(s.arity, pos),),
                )
            )
    result = Scop(
        name=scop.name,
        fields=scop.fields,
        statements=tuple(out),
        scatter_arity=scop.scatter_arity + 1,
        grid=scop.grid,
        functions=scop.functions,
    )
    result.validate()
    return result


# ---------------------------------------------------------------------------
# Sequential reference execution

FieldContents = dict  # field name -> numpy array


def _from_np(value, fld: FieldDecl):
    if fld.element_type == "bool":
        return bool(value)
    if fld.element_type == "int64":
        return int(value)
    return float(value)


def _check_store(value, fld: FieldDecl):
    if fld.element_type == "bool":
        if not isinstance(value, bool):
            raise EvaluationError(f"field {fld.name} stores bool, got {type(value).__name__}")
    elif fld.element_type == "int64":
        if isinstance(value, bool) or not isinstance(value, int):
            raise EvaluationError(f"field {fld.name} stores int64, got {type(value).__name__}")
    else:
        if not isinstance(value, float):
            raise EvaluationError(f"field {fld.name} stores float64, got {type(value).__name__}")
    return value


def sequential_execute(scop: Scop, init: FieldContents) -> FieldContents:
    """Run every statement instance in ascending scatter order on one memory."""
    fields = {}
    for f in scop.fields:
        if f.name not in init:
            raise EvaluationError(f"initial contents missing field {f.name}")
        arr = np.array(init[f.name], dtype=f.dtype)
        if arr.shape != f.extents:
            raise EvaluationError(f"initial contents for {f.name} have shape {arr.shape}")
        fields[f.name] = arr
    timeline = []
    for s in scop.real_statements():
        for point in enumerate_set(s.domain):
            timeline.append((s.scatter_of(point), s, point))
    timeline.sort(key=lambda item: item[0])
    scalars: dict[str, object] = {}
    for _, s, point in timeline:
        execute_instance(scop, s, point, scalars, fields)
    return fields


def execute_instance(scop: Scop, s: Statement, point, scalars, fields) -> None:
    """Evaluate one statement instance against the given memories."""

    def access(j: int):
        acc = s.accesses[j]
        fld = scop.field(acc.field)
        idx = tuple(e.evaluate(point) for e in acc.index_exprs)
        return _from_np(fields[acc.field][idx], fld)

    value = eval_expr(s.body, scalars, access, scop.functions)
    writes = s.writes()
    if writes:
        _, acc = writes[0]
        fld = scop.field(acc.field)
        idx = tuple(e.evaluate(point) for e in acc.index_exprs)
        fields[acc.field][idx] = _check_store(value, fld)
    for name in s.scalar_writes:
        scalars[name] = value
