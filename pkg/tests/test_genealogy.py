import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfrag.branching import simulate_system
from gfrag.genealogy import (GenealogyTree, Node, TreeError, build_tree, gh_bounds, gh_upper,
                             parse_bracket, rescale, tree_stats, truncate, truncation_gh_upper)
from gfrag.kernels import DescentKernel, FrozenKernel, RandomWalkKernel

RW = FrozenKernel(RandomWalkKernel(0.25), 1)


def segment(L):
    return GenealogyTree({(): Node(L, 0.0)})


def desc_tree():
    return build_tree(simulate_system(FrozenKernel(DescentKernel(), 1), 3))


def random_tree(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 40))
    return build_tree(simulate_system(RW, n, seed=seed))


def test_single_vertex():
    t = build_tree(simulate_system(FrozenKernel(RandomWalkKernel(0.25), 4), 3))
    assert t.height() == 0
    st_ = tree_stats(t)
    assert (st_.height, st_.total_length, st_.leaves, st_.diameter) == (0, 0, 1, 0)


def test_descent_tree():
    t = desc_tree()
    assert t.to_bracket() == "(2:0[(0:1[]),(0:2[])])"
    s = tree_stats(t)
    assert s.height == 2 and s.total_length == 2 and s.leaves == 2


def test_height_is_extinction_time():
    for seed in range(200):
        run = simulate_system(RW, 5 + seed % 50, seed=seed)
        assert build_tree(run).height() == run.extinction_time


def test_non_extinct_rejected():
    run = simulate_system(FrozenKernel(RandomWalkKernel(0.25), 0), 1, step_cap=50, particle_budget=2000)
    with pytest.raises(TreeError, match="exploded=True"):
        build_tree(run)


def test_truncate_zero_and_large():
    t = random_tree(3, 30)
    t0 = truncate(t, 0)
    assert list(t0.nodes) == [()] and not t0.nodes[()].children
    depth = max(len(l) for l in t.nodes)
    arity = max((max(l) for l in t.nodes if l), default=0)
    big = truncate(t, max(depth, arity))
    assert big == t
    assert gh_bounds(t, big) == (0.0, 0.0)


def test_truncation_nested():
    t = random_tree(4, 40)
    for h in range(6):
        small, large = truncate(t, h), truncate(t, h + 1)
        assert set(small.nodes) <= set(large.nodes)


def test_truncation_bound_monotone_in_h():
    for seed in range(100):
        t = random_tree(seed)
        vals = [truncation_gh_upper(t, h) for h in range(0, 12)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        depth = max(len(l) for l in t.nodes)
        arity = max((max(l) for l in t.nodes if l), default=0)
        assert truncation_gh_upper(t, max(depth, arity)) == 0


def test_rescale():
    t = random_tree(7)
    assert rescale(t, 1.0).height() == t.height()
    assert rescale(t, 2.5).height() == pytest.approx(2.5 * t.height())
    a = rescale(rescale(t, 0.3), 7.0)
    b = rescale(t, 2.1)
    assert abs(a.height() - b.height()) <= 1e-12 * b.height()
    with pytest.raises(ValueError):
        rescale(t, 0.0)


def test_bracket_roundtrip():
    for seed in range(20):
        t = random_tree(seed)
        assert parse_bracket(t.to_bracket()).to_bracket() == t.to_bracket()


def test_segments():
    lo, hi = gh_bounds(segment(1.0), segment(3.0))
    assert lo <= 1.0 <= hi
    assert lo == pytest.approx(1.0)


def test_identical_trees():
    t = random_tree(1)
    assert gh_bounds(t, t) == (0.0, 0.0)


def test_lower_le_upper_and_symmetry():
    for seed in range(150):
        a, b = random_tree(2 * seed), random_tree(2 * seed + 1)
        lo, hi = gh_bounds(a, b)
        assert lo <= hi + 1e-12
        assert gh_bounds(b, a) == pytest.approx((lo, hi))


def test_diameter_at_most_twice_height():
    for seed in range(100):
        t = random_tree(seed)
        s = tree_stats(t)
        assert s.diameter <= 2 * s.height + 1e-12


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0, 50), b=st.floats(0, 50), c=st.floats(0.1, 3))
def test_gh_upper_scales(a, b, c):
    t1 = GenealogyTree({(): Node(a, 0.0, ((1,),)), (1,): Node(b, a / 2)})
    t2 = segment(a)
    assert gh_upper(rescale(t1, c), rescale(t2, c)) == pytest.approx(c * gh_upper(t1, t2))
