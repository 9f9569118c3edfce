import random

import pytest

from polydist.errors import ParseError
from polydist.isets import IntSet, Space, apply, enumerate_set, maps_equal, sets_equal
from polydist.syntax import format_map, format_set, parse_expr, parse_map, parse_set

from oracle import random_map, random_set, random_space


def test_parse_simple_box():
    s = parse_set("{ [i,j] : 0 <= i < 3 and 1 <= j <= 2 }")
    assert enumerate_set(s) == [(0, 1), (0, 2), (1, 1), (1, 2), (2, 1), (2, 2)]


def test_parse_named_tuple():
    s = parse_set("{ S1.1[i,x,y] : 0 <= i < 2 and 0 <= x < 2 and y = 0 }")
    assert s.space.name == "S1.1"
    assert len(enumerate_set(s)) == 4


def test_parse_chained_comparison():
    a = parse_set("{ [i] : 0 <= i < 5 }")
    b = parse_set("{ [i] : i >= 0 and i < 5 }", space=a.space)
    assert sets_equal(a, b)


def test_parse_map_with_exprs_on_domain_side():
    m = parse_map("{ S2.2[i-1,x-1,y] -> S1.1[i,x,y] : 1 <= i < 3 and 2 <= x < 4 and 0 <= y < 2 }")
    pts = enumerate_set(m.as_set())
    for p in pts:
        gi, gx, gy, ci, cx, cy = p
        assert gi == ci - 1 and gx == cx - 1 and gy == cy


def test_parse_floor():
    m = parse_map("{ [w,h] -> [floor(w/8), floor(h/8)] : 0 <= w < 16 and 0 <= h < 16 }")
    img = apply(m, IntSet.from_points(m.dom, [(7, 8)]))
    assert enumerate_set(img) == [(0, 1)]


def test_parse_multi_piece():
    s = parse_set("{ [i] : i = 0; [i] : 2 <= i <= 4 }")
    assert enumerate_set(s) == [(0,), (2,), (3,), (4,)]


def test_parse_errors_have_position():
    with pytest.raises(ParseError):
        parse_set("{ [i] : 0 <= ")
    with pytest.raises(ParseError):
        parse_set("{ [i] ! }")
    with pytest.raises(ParseError):
        parse_set("{ [i] : q >= 0 }")


def test_parse_expr_over_space():
    sp = Space("D", ("i", "x", "y"))
    e = parse_expr("x - 1", sp)
    assert e.evaluate((0, 5, 7)) == 4
    e2 = parse_expr("2*i + floor(y/4)", sp)
    assert e2.evaluate((3, 0, 9)) == 8


def test_roundtrip_random_sets():
    rng = random.Random(11)
    for _ in range(40):
        sp = random_space(rng, "s")
        s = random_set(rng, sp, max_extent=6)
        back = parse_set(format_set(s), space=s.space)
        assert sets_equal(back, s)


def test_roundtrip_random_maps():
    rng = random.Random(12)
    for _ in range(30):
        dom = random_space(rng, "d", max_dims=2)
        ran = random_space(rng, "r", max_dims=2)
        m = random_map(rng, dom, ran, max_extent=5)
        back = parse_map(format_map(m), dom=m.dom, ran=m.ran)
        assert maps_equal(back, m)


def test_roundtrip_empty_set():
    s = parse_set("{ [i] : 0 <= i < 0 }")
    back = parse_set(format_set(s), space=s.space)
    assert sets_equal(back, s)
