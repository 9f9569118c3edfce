"""Randomized equivalence of the symbolic kernel against enumeration.

Every operation result, computed symbolically on constraints, must
enumerate to the same point set as the operation performed element-wise
on enumerations.
"""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polydist.isets import (
    IntMap,
    apply,
    compose,
    enumerate_set,
    transitive_closure,
)

from oracle import (
    random_map,
    random_set,
    random_space,
    ref_closure,
    run_algebra_case,
)


def run_closure_case(seed: int) -> None:
    rng = random.Random(seed)
    space = random_space(rng, "c", max_dims=2)
    m = random_map(rng, space, space.renamed("c'"), max_extent=4)
    m = IntMap(space, space, m.pieces)
    pairs = enumerate_set(m.as_set())
    if len(pairs) > 400:
        return
    tc = transitive_closure(m)
    assert set(enumerate_set(tc.as_set())) == set(ref_closure(pairs, space.arity))


@pytest.mark.parametrize("seed", range(0, 120))
def test_algebra_oracle(seed):
    run_algebra_case(seed)


@pytest.mark.parametrize("seed", range(0, 40))
def test_closure_oracle(seed):
    run_closure_case(seed + 9000)


@given(st.integers(min_value=0, max_value=10**9))
@settings(max_examples=40, deadline=None)
def test_algebra_oracle_hypothesis(seed):
    run_algebra_case(seed)


def test_compose_apply_associativity_random():
    rng = random.Random(7)
    for trial in range(25):
        dom = random_space(rng, "a", max_dims=3)
        mid = random_space(rng, "b", max_dims=2)
        out = random_space(rng, "c", max_dims=2)
        s = random_set(rng, dom, max_extent=5)
        f = random_map(rng, dom, mid, max_extent=4)
        g = random_map(rng, mid, out, max_extent=4)
        lhs = apply(compose(g, f), s)
        rhs = apply(g, apply(f, s))
        assert set(enumerate_set(lhs)) == set(enumerate_set(rhs)), f"trial {trial}"
