"""Deterministic in-process simulation of a node grid executing a plan.

Each node owns the storage for its home block of every field, a private
scalar environment, and a cursor into its event list.  Channels are
persistent point-to-point buffers with a four-state lifecycle:

    IDLE -(send_wait)-> FILLING -(send)-> SENT -(delivery)-> DELIVERED
    DELIVERED -(recv)-> IDLE

``send_wait`` blocks while the previous message has not been released by
the receiver's ``recv``; ``recv_wait`` blocks until delivery.  Delivery
happens strictly after the send's global step.  The scheduler always
executes the lowest pending (scatter, node) event that is not blocked,
which makes runs bit-reproducible; when nothing can run and nothing can
be delivered, the run aborts with DeadlockDetected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .commgen import CommPlan
from .errors import (
    BufferStateViolation,
    DeadlockDetected,
    GeometryMismatch,
    IndexOutOfBounds,
    NotLocal,
)
from .isets import IntSet, apply
from .scop import ELEMENT_DTYPES, Scop, _check_store, _from_np
from .exprs import eval_expr

__all__ = ["NodeState", "ChannelState", "Trace", "SimState", "init_runtime", "run"]

IDLE, FILLING, SENT, DELIVERED = "idle", "filling", "sent", "delivered"


@dataclass
class NodeState:
    coord: tuple
    storage: dict  # field -> numpy array over the home box
    boxes: dict  # field -> ((lo, hi), ...) home box
    scalars: dict = field(default_factory=dict)
    cursor: int = 0


@dataclass
class ChannelState:
    state: str = IDLE
    send_buf: list = field(default_factory=list)
    payload: tuple = ()
    sent_at: int = -1


@dataclass
class Trace:
    entries: list = field(default_factory=list)

    def log(self, step, node, kind, chunk, tag, digest):
        self.entries.append((step, node, kind, chunk, tag, digest))

    def to_text(self) -> str:
        lines = []
        for step, node, kind, chunk, tag, digest in self.entries:
            node_s = "(" + ",".join(map(str, node)) + ")"
            lines.append(f"step={step} node={node_s} kind={kind} chunk={chunk} tag={tag} digest={digest}")
        return "\n".join(lines) + ("\n" if lines else "")


class SimState:
    def __init__(self, plan: CommPlan, scop: Scop, nodes, channels, trace):
        self.plan = plan
        self.scop = scop
        self.nodes = nodes
        self.channels = channels
        self.trace = trace
        self.step = 0

    # -- value-level fallback access (synchronous single-value transfers) ----

    def _homes(self, fieldname: str, index) -> list:
        fld = self.scop.field(fieldname)
        if any(not 0 <= v < ext for v, ext in zip(index, fld.extents)):
            raise IndexOutOfBounds(f"{fieldname}{tuple(index)}")
        m = self.plan.field_maps[fieldname]
        out = [c for c in self.nodes if m.contains(tuple(index) + tuple(c))]
        return sorted(out)

    def value_load(self, fieldname: str, index):
        homes = self._homes(fieldname, index)
        node = self.nodes[min(homes)]
        fld = self.scop.field(fieldname)
        return _from_np(node.storage[fieldname][self._offset(node, fieldname, index)], fld)

    def value_store(self, fieldname: str, index, value):
        fld = self.scop.field(fieldname)
        _check_store(value, fld)
        for home in self._homes(fieldname, index):
            node = self.nodes[home]
            node.storage[fieldname][self._offset(node, fieldname, index)] = value

    def local_rank(self, node_coord, fieldname: str, index) -> int:
        """Row-major rank of a home element inside the node's home box."""
        node = self.nodes[tuple(node_coord)]
        if tuple(node_coord) not in self._homes(fieldname, index):
            raise NotLocal(f"{fieldname}{tuple(index)} is not homed on {tuple(node_coord)}")
        box = node.boxes[fieldname]
        rank = 0
        for v, (lo, hi) in zip(index, box):
            rank = rank * (hi - lo + 1) + (v - lo)
        return rank

    def _offset(self, node: NodeState, fieldname: str, index) -> tuple:
        box = node.boxes[fieldname]
        off = tuple(v - lo for v, (lo, _) in zip(index, box))
        for o, (lo, hi) in zip(off, box):
            if o < 0 or o > hi - lo:
                raise NotLocal(f"{fieldname}{tuple(index)} outside home box of {node.coord}")
        return off

    def gather(self) -> dict:
        out = {}
        for name, etype, extents in self.plan.fields:
            fld = self.scop.field(name)
            arr = np.zeros(extents, dtype=fld.dtype)
            # reversed so the lexicographically smallest home wins overlaps
            for coord in sorted(self.nodes, reverse=True):
                node = self.nodes[coord]
                box = node.boxes[name]
                if any(lo > hi for lo, hi in box):
                    continue
                slices = tuple(slice(lo, hi + 1) for lo, hi in box)
                arr[slices] = node.storage[name]
            out[name] = arr
        return out


def init_runtime(plan: CommPlan, grid, init: dict) -> SimState:
    """Build nodes and channels; abort on geometry mismatch."""
    grid_extents = tuple(grid.extents) if hasattr(grid, "extents") else tuple(grid)
    if grid_extents != tuple(plan.grid):
        raise GeometryMismatch(f"plan compiled for {plan.grid}, running on {grid_extents}")
    import itertools

    from .scop import ClusterGrid, FieldDecl

    scop_fields = tuple(
        FieldDecl(name=n, element_type=t, extents=tuple(e)) for n, t, e in plan.fields
    )
    from .scop import Scop as _Scop

    shell = _Scop(
        name=plan.name,
        fields=scop_fields,
        statements=(),
        scatter_arity=1,
        grid=ClusterGrid(grid_extents),
    )
    from .isets import IntSet, apply, inverse

    home_boxes: dict = {}
    for name, etype, extents in plan.fields:
        m = plan.field_maps[name]
        inv = inverse(m)
        for coord in itertools.product(*[range(e) for e in grid_extents]):
            pt = IntSet.from_points(inv.dom, [coord])
            home = apply(inv, pt)
            home_boxes[(name, coord)] = home.box()
    nodes = {}
    for coord in itertools.product(*[range(e) for e in grid_extents]):
        storage = {}
        boxes = {}
        for name, etype, extents in plan.fields:
            box = home_boxes[(name, coord)]
            if box is None:
                box = tuple((0, -1) for _ in extents)  # nothing homed here
            boxes[name] = box
            arr = np.array(
                init[name][tuple(slice(lo, hi + 1) for lo, hi in box)],
                dtype=ELEMENT_DTYPES[etype],
            )
            storage[name] = arr
        nodes[coord] = NodeState(coord=coord, storage=storage, boxes=boxes)
    channels = {ch.cid: ChannelState() for ch in plan.channels}
    return SimState(plan, shell, nodes, channels, Trace())


def _digest(values) -> str:
    h = hashlib.sha1(repr(values).encode()).hexdigest()
    return h[:12]


def run(sim: SimState, scop: Scop = None):
    """Execute the plan; returns (field contents, trace)."""
    plan = sim.plan
    if scop is not None:
        sim.scop = scop
    exec_scop = sim.scop
    functions = exec_scop.functions
    stmts = {s.id: s for s in exec_scop.statements}

    node_events = {coord: plan.events.get(coord, []) for coord in sim.nodes}
    pending = {coord for coord, evs in node_events.items() if evs}
    if not stmts and any(
        ev.kind == "compute" for evs in node_events.values() for ev in evs
    ):
        raise BufferStateViolation("plan has compute events but no scop was attached")

    def deliver(ch: ChannelState):
        if ch.state == SENT and ch.sent_at < sim.step:
            ch.state = DELIVERED

    def executable(ev) -> bool:
        ch = sim.channels.get(ev.cid)
        if ev.kind == "send_wait":
            return ch.state == IDLE
        if ev.kind == "recv_wait":
            deliver(ch)
            return ch.state == DELIVERED
        return True

    def run_event(node: "NodeState", ev):
        ch = sim.channels.get(ev.cid)
        digest = "-"
        if ev.kind == "send_wait":
            chan = plan.channels[ev.cid]
            ch.state = FILLING
            ch.send_buf = [None] * chan.layout.size
        elif ev.kind == "send":
            if ch.state != FILLING:
                raise BufferStateViolation(f"send on channel {ev.cid} in state {ch.state}")
            ch.payload = tuple(ch.send_buf)
            ch.state = SENT
            ch.sent_at = sim.step
            digest = _digest(ch.payload)
        elif ev.kind == "recv_wait":
            if ch.state != DELIVERED:
                raise BufferStateViolation(f"recv_wait passed in state {ch.state}")
        elif ev.kind == "recv":
            deliver(ch)
            if ch.state != DELIVERED:
                raise BufferStateViolation(f"recv on channel {ev.cid} in state {ch.state}")
            digest = _digest(ch.payload)
            ch.payload = ()
            ch.state = IDLE
        elif ev.kind == "buffer_fill":
            if ch.state != FILLING:
                raise BufferStateViolation(f"buffer fill in state {ch.state}")
            chan = plan.channels[ev.cid]
            fld = exec_scop.field(chan.layout.fieldname)
            value = _from_np(
                node.storage[chan.layout.fieldname][sim._offset(node, chan.layout.fieldname, ev.element)],
                fld,
            )
            ch.send_buf[ev.rank] = value
        elif ev.kind == "buffer_drain":
            deliver(ch)
            if ch.state != DELIVERED:
                raise BufferStateViolation(f"buffer drain in state {ch.state}")
            chan = plan.channels[ev.cid]
            node.storage[chan.layout.fieldname][
                sim._offset(node, chan.layout.fieldname, ev.element)
            ] = ch.payload[ev.rank]
        elif ev.kind == "compute":
            s = stmts[ev.stmt]

            def access(j):
                if ev.read_from is None:
                    raise BufferStateViolation(f"{ev.stmt}{ev.instance}: unbound field read")
                cid, rank = ev.read_from
                rch = sim.channels[cid]
                deliver(rch)
                if rch.state != DELIVERED:
                    raise BufferStateViolation(
                        f"{ev.stmt}{ev.instance}: buffer read on channel {cid} in state {rch.state}"
                    )
                value = rch.payload[rank]
                if value is None:
                    raise BufferStateViolation(
                        f"{ev.stmt}{ev.instance}: reading unwritten buffer slot"
                    )
                return value

            value = eval_expr(s.body, node.scalars, access, functions)
            if s.writes():
                _, acc = s.writes()[0]
                fld = exec_scop.field(acc.field)
                _check_store(value, fld)
                k = tuple(e.evaluate(ev.instance) for e in acc.index_exprs)
                for w in ev.writes:
                    if w[0] == "storage":
                        node.storage[acc.field][sim._offset(node, acc.field, k)] = value
                    else:
                        _, cid, rank = w
                        wch = sim.channels[cid]
                        if wch.state != FILLING:
                            raise BufferStateViolation(
                                f"{ev.stmt}{ev.instance}: buffer write on channel {cid} "
                                f"in state {wch.state}"
                            )
                        wch.send_buf[rank] = value
            for name in s.scalar_writes:
                node.scalars[name] = value
        else:
            raise BufferStateViolation(f"unknown event kind {ev.kind}")
        chunk = ev.chunk
        tag = plan.channels[ev.cid].tag if ev.cid >= 0 else -1
        if ev.kind == "compute":
            chunk = f"{ev.stmt}{ '(' + ','.join(map(str, ev.instance)) + ')' }"
        sim.trace.log(sim.step, node.coord, ev.kind, chunk, tag, digest)
        sim.step += 1

    while pending:
        best = None
        for coord in sorted(pending):
            node = sim.nodes[coord]
            ev = node_events[coord][node.cursor]
            key = (ev.scatter, coord)
            if (best is None or key < best[0]) and executable(ev):
                if best is None or key < best[0]:
                    best = (key, coord, ev)
        if best is None:
            blocked = {
                coord: node_events[coord][sim.nodes[coord].cursor].kind for coord in sorted(pending)
            }
            raise DeadlockDetected(f"all nodes blocked: {blocked}")
        _, coord, ev = best
        node = sim.nodes[coord]
        run_event(node, ev)
        node.cursor += 1
        if node.cursor >= len(node_events[coord]):
            pending.discard(coord)
    return sim.gather(), sim.trace
