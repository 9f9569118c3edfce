"""Field contents: construction, seeded random fill, and flat-text exchange.

The text format is one section per field, row-major values, so that a
simulator run and the sequential oracle can be diffed externally::

    field front bool 16 16
    0 1 0 ...
    field back bool 16 16
    ...
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError, ValidationError
from .scop import FieldDecl, Scop

__all__ = ["splitmix64", "random_contents", "zero_contents", "dump_contents", "load_contents", "contents_equal"]

_MASK = (1 << 64) - 1


def splitmix64(seed: int):
    """The documented PRNG for reproducible initial field contents.

    state += 0x9E3779B97F4A7C15
    z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    yield z ^ (z >> 31)
    """
    state = seed & _MASK
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        yield z ^ (z >> 31)


def _value_for(field: FieldDecl, word: int):
    if field.element_type == "bool":
        return bool(word & 1)
    if field.element_type == "int64":
        return word - (1 << 64) if word >= (1 << 63) else word
    return (word >> 11) * (2.0**-53)


def random_contents(scop: Scop, seed: int) -> dict:
    """Per field in declaration order, elements row-major, one PRNG draw each."""
    gen = splitmix64(seed)
    out = {}
    for f in scop.fields:
        arr = np.empty(f.extents, dtype=f.dtype)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            flat[i] = _value_for(f, next(gen))
        out[f.name] = arr
    return out


def zero_contents(scop: Scop) -> dict:
    return {f.name: np.zeros(f.extents, dtype=f.dtype) for f in scop.fields}


def _fmt(field: FieldDecl, v) -> str:
    if field.element_type == "bool":
        return "1" if v else "0"
    if field.element_type == "int64":
        return str(int(v))
    return repr(float(v))


def dump_contents(scop: Scop, contents: dict) -> str:
    lines = []
    for f in scop.fields:
        arr = np.asarray(contents[f.name])
        lines.append(f"field {f.name} {f.element_type} {' '.join(map(str, f.extents))}")
        flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
        for row in flat:
            lines.append(" ".join(_fmt(f, v) for v in row))
    return "\n".join(lines) + "\n"


def load_contents(scop: Scop, text: str) -> dict:
    out = {}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "field":
            raise ParseError(f"expected 'field' header, got {lines[i]!r}")
        name, etype = head[1], head[2]
        extents = tuple(int(x) for x in head[3:])
        fld = scop.field(name)
        if fld.element_type != etype or fld.extents != extents:
            raise ValidationError(f"field {name} header does not match declaration")
        rows = extents[0] if len(extents) > 1 else 1
        per_row = 1
        for e in (extents[1:] if len(extents) > 1 else extents):
            per_row *= e
        values = []
        for r in range(rows):
            i += 1
            parts = lines[i].split()
            if len(parts) != per_row:
                raise ParseError(f"field {name}: row {r} has {len(parts)} values")
            values.extend(parts)
        i += 1
        if etype == "bool":
            arr = np.array([v == "1" for v in values], dtype=np.bool_)
        elif etype == "int64":
            arr = np.array([int(v) for v in values], dtype=np.int64)
        else:
            arr = np.array([float(v) for v in values], dtype=np.float64)
        out[name] = arr.reshape(extents)
    for f in scop.fields:
        if f.name not in out:
            raise ValidationError(f"missing contents for field {f.name}")
    return out


def contents_equal(a: dict, b: dict) -> bool:
    if set(a) != set(b):
        return False
    return all(np.array_equal(a[k], b[k]) for k in a)


def first_divergence(a: dict, b: dict):
    """(field, index, expected, got) of the first mismatch, or None."""
    for name in sorted(a):
        av, bv = np.asarray(a[name]), np.asarray(b[name])
        if av.shape != bv.shape:
            return (name, None, av.shape, bv.shape)
        diff = av != bv
        if diff.any():
            idx = tuple(int(x) for x in np.argwhere(diff)[0])
            return (name, idx, av[idx], bv[idx])
    return None
