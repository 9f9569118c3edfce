"""Communication plan generation.

Builds the transfer relation (which producer execution feeds which
consumer execution with which field element), groups transfers into
chunks via the chunking functions, and emits the six-call protocol per
chunk and (source, destination) pair:

    send_wait   one step before the chunk's first producer execution
    buffer writes   at the producer executions (replacing local stores)
    send        one step after the last producer execution
    recv_wait   one step before the first consumer execution
    buffer reads    at the consumer executions
    recv        one step after the last consumer execution

All schedules are dilated by two first, so the inserted calls land on odd
scatter coordinates that no statement instance occupies.  Prologue and
epilogue flows travel as a single chunk per family between field storage
and the buffers.  Producers whose values also reach the epilogue keep
their local store; all other original stores are dropped, so consumers
read intra-scop values from buffers only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .deps import EPILOGUE, PROLOGUE, DepGraph, FlowFamily
from .errors import AnalysisError, OutOfHull, ScatterCollision
from .isets import (
    IntSet,
    Space,
    embed_pieces,
    enumerate_set,
    eq0,
    is_empty,
    project_pieces,
    select_lex_extreme,
    subtract,
    union,
    AffineExpr,
)
from .placement import FieldPlacement, StmtPlacement
from .scop import Scop
from .syntax import format_map

__all__ = [
    "TransferTuple",
    "BufferLayout",
    "Channel",
    "Event",
    "CommPlan",
    "build_transfers",
    "group_chunks",
    "emit_protocol",
    "buffer_rank",
    "compile_plan",
    "dump_plan",
    "parse_plan",
]


@dataclass(frozen=True)
class TransferTuple:
    """One resolved transfer: the producer execution feeding one consumer
    execution with one field element, tagged by its chunk representative."""

    representative: tuple
    producer: str
    producer_instance: tuple
    producer_node: tuple
    consumer: str
    consumer_instance: tuple
    consumer_node: tuple
    fieldname: str
    element: tuple


@dataclass(frozen=True)
class BufferLayout:
    """Dense hull-box indexing for one channel's buffers."""

    fieldname: str
    box: tuple  # ((lo, hi), ...) inclusive

    @property
    def size(self) -> int:
        n = 1
        for lo, hi in self.box:
            n *= hi - lo + 1
        return n

    def rank(self, index) -> int:
        return buffer_rank(self, index)


def buffer_rank(layout: BufferLayout, index) -> int:
    """Row-major rank of an element inside the hull box, zero-based."""
    if len(index) != len(layout.box):
        raise OutOfHull(f"index arity {len(index)} != box arity {len(layout.box)}")
    rank = 0
    for v, (lo, hi) in zip(index, layout.box):
        if not lo <= v <= hi:
            raise OutOfHull(f"index {tuple(index)} outside hull box {layout.box}")
        rank = rank * (hi - lo + 1) + (v - lo)
    return rank


@dataclass(frozen=True)
class Channel:
    cid: int
    family: str  # e.g. "flow:S2.2->S1.1:front", "pro:S1.1:front", "epi:S1.7:back"
    src: tuple
    dst: tuple
    tag: int
    layout: BufferLayout
    element_type: str

    @property
    def loopback(self) -> bool:
        return self.src == self.dst


@dataclass(frozen=True)
class Event:
    node: tuple
    scatter: tuple
    kind: str  # compute | send_wait | send | recv_wait | recv | buffer_fill | buffer_drain
    stmt: str = ""
    instance: tuple = ()
    read_from: Optional[tuple] = None  # (cid, rank) buffer read binding
    writes: tuple = ()  # ("storage",) and/or ("buffer", cid, rank) entries
    chunk: str = ""
    cid: int = -1
    element: tuple = ()  # for fill/drain events
    rank: int = -1

    def sort_key(self):
        phase = {"recv": 0, "send": 1, "recv_wait": 2, "send_wait": 3}.get(self.kind, 4)
        return (self.scatter, phase, self.cid, self.rank, self.stmt, self.instance)


@dataclass
class CommPlan:
    name: str
    grid: tuple
    scatter_arity: int
    fields: tuple  # (name, element_type, extents)
    block_extents: dict
    field_maps: dict  # field name -> IntMap (element -> home nodes)
    channels: list
    events: dict  # node -> sorted list[Event]

    def channel(self, cid: int) -> Channel:
        return self.channels[cid]

    def all_events(self) -> list:
        out = []
        for node in sorted(self.events):
            out.extend(self.events[node])
        return out


# ---------------------------------------------------------------------------
# Transfers


def _family_key(fam: FlowFamily) -> str:
    if fam.producer == PROLOGUE:
        return f"pro:{fam.consumer}:{fam.ref}"
    if fam.consumer == EPILOGUE:
        return f"epi:{fam.producer}:{fam.ref}"
    return f"flow:{fam.producer}->{fam.consumer}:{fam.ref}"


def _exec_relation(fam: FlowFamily, sp: StmtPlacement, fp: FieldPlacement) -> IntSet:
    """Relation over (i_G ++ i_C ++ k ++ p_C ++ p_G) of candidate transfers.

    For the virtual prologue the producer executions are the element's
    homes; for the virtual epilogue the consumer executions are."""
    n_g, n_c, n_k = fam.n_prod, fam.n_cons, fam.n_elem
    if fam.producer == PROLOGUE:
        prod_rel = fp.maps[fam.ref]  # element -> home nodes
        prod_map_dims = "element"
    else:
        prod_rel = sp.maps[fam.producer]
        prod_map_dims = "instance"
    if fam.consumer == EPILOGUE:
        cons_rel = fp.maps[fam.ref]
        cons_map_dims = "element"
    else:
        cons_rel = sp.maps[fam.consumer]
        cons_map_dims = "instance"
    n_p = prod_rel.n_out
    arity = n_g + n_c + n_k + n_p + n_p
    pieces = embed_pieces(fam.rel.pieces, list(range(n_g + n_c + n_k)), arity)
    kc_base = n_g + n_c
    pc_base = n_g + n_c + n_k
    pg_base = pc_base + n_p
    if cons_map_dims == "instance":
        cmap = [n_g + i for i in range(n_c)] + [pc_base + i for i in range(n_p)]
    else:
        cmap = [kc_base + i for i in range(n_k)] + [pc_base + i for i in range(n_p)]
    cons_pieces = embed_pieces(cons_rel.pieces, cmap, arity)
    if prod_map_dims == "instance":
        gmap = list(range(n_g)) + [pg_base + i for i in range(n_p)]
    else:
        gmap = [kc_base + i for i in range(n_k)] + [pg_base + i for i in range(n_p)]
    prod_pieces = embed_pieces(prod_rel.pieces, gmap, arity)
    combined = []
    for a in pieces:
        for b in cons_pieces:
            for c in prod_pieces:
                combined.append(a + b + c)
    dims = []
    for i in range(arity):
        dims.append(f"d{i}")
    space = Space(f"T:{_family_key(fam)}", tuple(dims))
    return IntSet.make(space, combined, check=False)


def _select_producer_node(t: IntSet, n_p: int) -> IntSet:
    """Unique producer execution per (consumer execution, element): keep the
    producer on the consumer's node when present, else the lexmin node."""
    arity = t.arity
    pg_base = arity - n_p
    pc_base = pg_base - n_p
    same_cons = []
    for d in range(n_p):
        same_cons.append(
            eq0(AffineExpr.var(arity, pc_base + d) - AffineExpr.var(arity, pg_base + d))
        )
    t_same = IntSet.make(t.space, [p + tuple(same_cons) for p in t.pieces], check=False)
    if is_empty(t_same):
        rest = t
    else:
        covered = project_pieces(arity, t_same.pieces, list(range(pg_base, arity)))
        covered_w = embed_pieces(covered, list(range(pg_base)), arity)
        rest = subtract(t, IntSet.make(t.space, covered_w, check=False))
    if is_empty(rest):
        return t_same
    chosen = select_lex_extreme(rest, pg_base, maximize=False)
    return union(t_same, chosen)


def _placement_nodes(dep: DepGraph, sp: StmtPlacement) -> dict:
    """Statement id -> instance -> sorted node list (enumerated graphs)."""
    cached = getattr(dep, "_placement_nodes", None)
    if cached is not None:
        return cached
    out: dict = {}
    for s in dep.scop.statements:
        m = sp.maps[s.id]
        n_i = s.arity
        table: dict = {}
        for pt in enumerate_set(m.as_set()):
            table.setdefault(pt[:n_i], []).append(pt[n_i:])
        for v in table.values():
            v.sort()
        out[s.id] = table
    setattr(dep, "_placement_nodes", out)
    return out


def build_transfers(dep: DepGraph, sp: StmtPlacement, fp: FieldPlacement, chunkings: dict) -> dict:
    """Resolved transfer tuples per family key.

    The unique-producer choice is made symbolically on the execution
    relation; candidate executions are then enumerated from the family
    pairs and placement graphs and membership-filtered against it.
    """
    exec_nodes = _placement_nodes(dep, sp)
    out: dict = {}
    for fam in dep.field_families():
        key = _family_key(fam)
        n_g, n_c, n_k = fam.n_prod, fam.n_cons, fam.n_elem
        t = _exec_relation(fam, sp, fp)
        n_p = (t.arity - n_g - n_c - n_k) // 2
        t_sel = _select_producer_node(t, n_p)
        phi = chunkings.get((fam.producer, fam.consumer, fam.ref))
        if phi is None and fam.producer != PROLOGUE and fam.consumer != EPILOGUE:
            raise AnalysisError(f"no chunking function for family {key}")
        tuples = []
        for ig, ic, k in fam.pairs():
            if fam.producer == PROLOGUE:
                prod_nodes = fp.homes(fam.ref, k)
            else:
                prod_nodes = exec_nodes[fam.producer][ig]
            if fam.consumer == EPILOGUE:
                cons_nodes = fp.homes(fam.ref, k)
            else:
                cons_nodes = exec_nodes[fam.consumer][ic]
            for pc in cons_nodes:
                for pg in prod_nodes:
                    if not t_sel.contains(ig + ic + k + tuple(pc) + tuple(pg)):
                        continue
                    if fam.producer == PROLOGUE or fam.consumer == EPILOGUE:
                        rep = ()  # single chunk per prologue/epilogue family
                    else:
                        rep = phi.apply_point(ic)
                    tuples.append(
                        TransferTuple(
                            representative=rep,
                            producer=fam.producer,
                            producer_instance=ig,
                            producer_node=tuple(pg),
                            consumer=fam.consumer,
                            consumer_instance=ic,
                            consumer_node=tuple(pc),
                            fieldname=fam.ref,
                            element=k,
                        )
                    )
        out[key] = tuples
    return out


def group_chunks(transfers: dict) -> dict:
    """family key -> representative -> transfer list; empty chunks dropped."""
    out: dict = {}
    for key, tuples in transfers.items():
        chunks: dict = {}
        for t in tuples:
            chunks.setdefault(t.representative, []).append(t)
        out[key] = {rep: chunk for rep, chunk in sorted(chunks.items()) if chunk}
    return out


# ---------------------------------------------------------------------------
# Protocol emission


def _dilated(stmt, point) -> tuple:
    return tuple(2 * v for v in stmt.scatter_of(point))


def _offset_last(t: tuple, delta: int) -> tuple:
    return t[:-1] + (t[-1] + delta,)


def emit_protocol(
    scop: Scop,
    dep: DepGraph,
    fp: FieldPlacement,
    sp: StmtPlacement,
    chunked: dict,
    dilation: int = 2,
) -> CommPlan:
    """Assemble the per-node event lists from grouped transfers."""
    stmts = {s.id: s for s in scop.statements}

    def dil(sid, point):
        return tuple(dilation * v for v in stmts[sid].scatter_of(point))

    # channels: one per (family, src, dst), layouts over the union hull
    chan_elems: dict = {}
    order: list = []
    for key in chunked:
        for rep, tuples in chunked[key].items():
            for t in tuples:
                ck = (key, t.producer_node, t.consumer_node)
                if ck not in chan_elems:
                    chan_elems[ck] = set()
                    order.append(ck)
                chan_elems[ck].add(t.element)
    channels: list = []
    chan_ids: dict = {}
    for tag, ck in enumerate(order):
        key, src, dst = ck
        elems = chan_elems[ck]
        fieldname = key.rsplit(":", 1)[1]
        fld = scop.field(fieldname)
        box = tuple(
            (min(e[d] for e in elems), max(e[d] for e in elems)) for d in range(fld.arity)
        )
        layout = BufferLayout(fieldname=fieldname, box=box)
        cid = len(channels)
        channels.append(
            Channel(
                cid=cid,
                family=key,
                src=src,
                dst=dst,
                tag=tag,
                layout=layout,
                element_type=fld.element_type,
            )
        )
        chan_ids[ck] = cid

    read_bindings: dict = {}  # (consumer, instance, node) -> (cid, rank)
    write_bindings: dict = {}  # (producer, instance, node) -> [(cid, rank)]
    events: dict = {}

    def emit(node, ev: Event):
        events.setdefault(node, []).append(ev)

    retained = {f.producer for f in dep.epilogue_families()}

    for key in chunked:
        for rep, tuples in sorted(chunked[key].items()):
            chunk_name = f"{key}@{_fmt_tuple(rep)}"
            by_pair: dict = {}
            for t in tuples:
                by_pair.setdefault((t.producer_node, t.consumer_node), []).append(t)
            for (src, dst), group in sorted(by_pair.items()):
                cid = chan_ids[(key, src, dst)]
                layout = channels[cid].layout
                is_pro = key.startswith("pro:")
                is_epi = key.startswith("epi:")
                # producer side
                if is_pro:
                    t_pro = dil(PROLOGUE, ())
                    emit(src, Event(node=src, scatter=_offset_last(t_pro, -1),
                                    kind="send_wait", chunk=chunk_name, cid=cid))
                    filled = set()
                    for t in sorted(group, key=lambda t: layout.rank(t.element)):
                        rank = layout.rank(t.element)
                        if rank in filled:
                            continue
                        filled.add(rank)
                        emit(src, Event(node=src, scatter=t_pro, kind="buffer_fill",
                                        chunk=chunk_name, cid=cid, element=t.element,
                                        rank=rank))
                    emit(src, Event(node=src, scatter=_offset_last(t_pro, +1),
                                    kind="send", chunk=chunk_name, cid=cid))
                else:
                    prod_scatters = sorted(dil(t.producer, t.producer_instance) for t in group)
                    emit(src, Event(node=src, scatter=_offset_last(prod_scatters[0], -1),
                                    kind="send_wait", chunk=chunk_name, cid=cid))
                    emit(src, Event(node=src, scatter=_offset_last(prod_scatters[-1], +1),
                                    kind="send", chunk=chunk_name, cid=cid))
                    for t in group:
                        wkey = (t.producer, t.producer_instance, src)
                        write_bindings.setdefault(wkey, []).append(
                            (cid, layout.rank(t.element))
                        )
                # consumer side
                if is_epi:
                    t_epi = dil(EPILOGUE, ())
                    emit(dst, Event(node=dst, scatter=_offset_last(t_epi, -1),
                                    kind="recv_wait", chunk=chunk_name, cid=cid))
                    for t in sorted(group, key=lambda t: layout.rank(t.element)):
                        emit(dst, Event(node=dst, scatter=t_epi, kind="buffer_drain",
                                        chunk=chunk_name, cid=cid, element=t.element,
                                        rank=layout.rank(t.element)))
                    emit(dst, Event(node=dst, scatter=_offset_last(t_epi, +1),
                                    kind="recv", chunk=chunk_name, cid=cid))
                else:
                    cons_scatters = sorted(dil(t.consumer, t.consumer_instance) for t in group)
                    emit(dst, Event(node=dst, scatter=_offset_last(cons_scatters[0], -1),
                                    kind="recv_wait", chunk=chunk_name, cid=cid))
                    emit(dst, Event(node=dst, scatter=_offset_last(cons_scatters[-1], +1),
                                    kind="recv", chunk=chunk_name, cid=cid))
                    for t in group:
                        rkey = (t.consumer, t.consumer_instance, dst)
                        if rkey in read_bindings:
                            raise AnalysisError(f"double read binding for {rkey}")
                        read_bindings[rkey] = (cid, layout.rank(t.element))

    # compute events for every execution of every real statement
    exec_nodes = _placement_nodes(dep, sp)
    compute_scatters: dict = {}
    for s in scop.real_statements():
        for inst, exec_list in sorted(exec_nodes[s.id].items()):
            scatter = dil(s.id, inst)
            for node in map(tuple, exec_list):
                compute_scatters.setdefault(node, set()).add(scatter)
                read_from = None
                if s.reads():
                    read_from = read_bindings.get((s.id, inst, node))
                    if read_from is None:
                        raise AnalysisError(f"unbound read for {s.id}{inst} on {node}")
                writes = []
                if s.writes():
                    _, acc = s.writes()[0]
                    if s.id in retained:
                        k = tuple(e.evaluate(inst) for e in acc.index_exprs)
                        if node in {tuple(h) for h in fp.homes(acc.field, k)}:
                            writes.append(("storage",))
                    for cid, rank in sorted(set(write_bindings.get((s.id, inst, node), []))):
                        writes.append(("buffer", cid, rank))
                emit(node, Event(node=node, scatter=scatter, kind="compute", stmt=s.id,
                                 instance=inst, read_from=read_from, writes=tuple(writes)))

    # prologue fills and epilogue drains execute at virtual-statement scatters;
    # inserted comm calls must never collide with a statement instance
    for node, evs in events.items():
        occupied = compute_scatters.get(node, set())
        for ev in evs:
            if ev.kind in ("send_wait", "send", "recv_wait", "recv"):
                if ev.scatter in occupied:
                    raise ScatterCollision(
                        f"{ev.kind} at {ev.scatter} collides with a statement on {node}"
                    )

    for node in events:
        events[node].sort(key=Event.sort_key)

    return CommPlan(
        name=scop.name,
        grid=scop.grid.extents,
        scatter_arity=scop.scatter_arity,
        fields=tuple((f.name, f.element_type, f.extents) for f in scop.fields),
        block_extents=dict(fp.block_extents),
        field_maps={f.name: fp.maps[f.name] for f in scop.fields},
        channels=channels,
        events={node: evs for node, evs in sorted(events.items())},
    )


def compile_plan(scop: Scop, dep: DepGraph, fp: FieldPlacement, sp: StmtPlacement, chunkings: dict) -> CommPlan:
    transfers = build_transfers(dep, sp, fp, chunkings)
    chunked = group_chunks(transfers)
    return emit_protocol(scop, dep, fp, sp, chunked)


# ---------------------------------------------------------------------------
# Plan text format


def _fmt_tuple(t) -> str:
    return "(" + ",".join(str(v) for v in t) + ")"


def _parse_tuple(text: str) -> tuple:
    inner = text.strip()
    if not (inner.startswith("(") and inner.endswith(")")):
        raise ValueError(f"bad tuple {text!r}")
    inner = inner[1:-1]
    if not inner:
        return ()
    return tuple(int(x) for x in inner.split(","))


def _fmt_writes(writes) -> str:
    if not writes:
        return "none"
    parts = []
    for w in writes:
        if w[0] == "storage":
            parts.append("storage")
        else:
            parts.append(f"buf:{w[1]}@{w[2]}")
    return "+".join(parts)


def _parse_writes(text: str):
    if text == "none":
        return ()
    out = []
    for part in text.split("+"):
        if part == "storage":
            out.append(("storage",))
        else:
            body = part[len("buf:") :]
            cid, rank = body.split("@")
            out.append(("buffer", int(cid), int(rank)))
    return tuple(out)


def dump_plan(plan: CommPlan) -> str:
    lines = [f"plan {plan.name} grid={_fmt_tuple(plan.grid)} scatter_arity={plan.scatter_arity}"]
    for name, etype, extents in plan.fields:
        block = plan.block_extents[name]
        lines.append(
            f"field {name} {etype} extents={_fmt_tuple(extents)} block={_fmt_tuple(block)}"
        )
        lines.append(f"fieldmap {name} {format_map(plan.field_maps[name])}")
    for ch in plan.channels:
        box = ";".join(f"{lo}:{hi}" for lo, hi in ch.layout.box)
        lines.append(
            f"channel cid={ch.cid} family={ch.family} src={_fmt_tuple(ch.src)} "
            f"dst={_fmt_tuple(ch.dst)} tag={ch.tag} size={ch.layout.size} "
            f"elem={ch.element_type} box=[{box}]"
            + (" loopback" if ch.loopback else "")
        )
    for node in sorted(plan.events):
        for ev in plan.events[node]:
            base = f"node={_fmt_tuple(node)} t={_fmt_tuple(ev.scatter)} kind={ev.kind}"
            if ev.kind == "compute":
                read = "storage" if ev.read_from is None else f"buf:{ev.read_from[0]}@{ev.read_from[1]}"
                lines.append(
                    f"{base} stmt={ev.stmt} i={_fmt_tuple(ev.instance)} "
                    f"read={read} write={_fmt_writes(ev.writes)}"
                )
            elif ev.kind in ("buffer_fill", "buffer_drain"):
                lines.append(
                    f"{base} chunk={ev.chunk} cid={ev.cid} elem={_fmt_tuple(ev.element)} rank={ev.rank}"
                )
            else:
                ch = plan.channels[ev.cid]
                lines.append(
                    f"{base} chunk={ev.chunk} src={_fmt_tuple(ch.src)} dst={_fmt_tuple(ch.dst)} "
                    f"tag={ch.tag} size={ch.layout.size}"
                )
    return "\n".join(lines) + "\n"


def parse_plan(text: str) -> CommPlan:
    """Rebuild a plan from its dump; the file is self-contained."""
    from .syntax import parse_map

    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "plan":
        raise ValueError("not a plan file")
    name = head[1]
    grid = _parse_tuple(head[2].split("=", 1)[1])
    scatter_arity = int(head[3].split("=", 1)[1])
    fields = []
    block_extents = {}
    field_maps = {}
    channels = []
    events: dict = {}
    cid_by_tag: dict = {}
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "fieldmap":
            field_maps[parts[1]] = parse_map(ln.split(None, 2)[2])
            continue
        kv = {}
        for p in parts[1:]:
            if "=" in p:
                key, val = p.split("=", 1)
                kv[key] = val
        if parts[0] == "field":
            fields.append((parts[1], parts[2], _parse_tuple(kv["extents"])))
            block_extents[parts[1]] = _parse_tuple(kv["block"])
        elif parts[0] == "channel":
            box_text = kv["box"][1:-1]
            box = tuple(
                (int(a), int(b)) for a, b in (seg.split(":") for seg in box_text.split(";"))
            ) if box_text else ()
            ch = Channel(
                cid=int(kv["cid"]),
                family=kv["family"],
                src=_parse_tuple(kv["src"]),
                dst=_parse_tuple(kv["dst"]),
                tag=int(kv["tag"]),
                layout=BufferLayout(fieldname=kv["family"].rsplit(":", 1)[1], box=box),
                element_type=kv["elem"],
            )
            channels.append(ch)
            cid_by_tag[ch.tag] = ch.cid
        elif parts[0].startswith("node="):
            node = _parse_tuple(parts[0].split("=", 1)[1])
            scatter = _parse_tuple(kv["t"])
            kind = kv["kind"]
            if kind == "compute":
                read = None
                if kv["read"] != "storage":
                    body = kv["read"][len("buf:") :]
                    cid, rank = body.split("@")
                    read = (int(cid), int(rank))
                ev = Event(node=node, scatter=scatter, kind=kind, stmt=kv["stmt"],
                           instance=_parse_tuple(kv["i"]), read_from=read,
                           writes=_parse_writes(kv["write"]))
            elif kind in ("buffer_fill", "buffer_drain"):
                ev = Event(node=node, scatter=scatter, kind=kind, chunk=kv["chunk"],
                           cid=int(kv["cid"]), element=_parse_tuple(kv["elem"]),
                           rank=int(kv["rank"]))
            else:
                ev = Event(node=node, scatter=scatter, kind=kind, chunk=kv["chunk"],
                           cid=cid_by_tag[int(kv["tag"])])
            events.setdefault(node, []).append(ev)
        else:
            raise ValueError(f"bad plan line: {ln!r}")
    return CommPlan(
        name=name,
        grid=grid,
        scatter_arity=scatter_arity,
        fields=tuple(fields),
        block_extents=block_extents,
        field_maps=field_maps,
        channels=channels,
        events={node: evs for node, evs in sorted(events.items())},
    )
