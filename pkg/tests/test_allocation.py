import csv
from fractions import Fraction

import numpy as np
import pytest

from codedreduce.allocation import (
    AllocationError,
    WeightedSlice,
    assignment_to_csv,
    comp_alloc,
    cr_allocate,
    granularity,
    r_cr,
    r_gc,
    slice_count,
    take_points,
    uniform_partition,
)
from codedreduce.codes import build_encoding
from codedreduce.topology import NodeId, build_tree


def brute_force_granularity(n, L, s, limit=2000):
    """Independent oracle: walk the allocation recursion for each candidate d
    and return the first d where every intermediate size is an integer."""
    load = r_cr(n, L, s)
    for d in range(1, limit + 1):
        if (load * d).denominator != 1:
            continue
        ok = True
        remainder = Fraction(d)
        for _ in range(L):
            if (remainder / n).denominator != 1:
                ok = False
                break
            remainder = remainder * Fraction(s + 1, n) - load * d
        if ok and remainder == 0:
            return d
    raise AssertionError("no feasible d found")


def test_load_fraction_examples():
    assert r_cr(3, 2, 1) == Fraction(4, 15)
    assert r_cr(12, 2, 1) == Fraction(1, 42)
    assert r_gc(3, 1) == Fraction(2, 3)
    assert r_gc(7, 0) == Fraction(1, 7)
    assert r_gc(156, 13) == Fraction(7, 78)


def test_single_layer_collapses_to_flat_load():
    for n in range(2, 21):
        for s in range(n):
            assert r_cr(n, 1, s) == r_gc(n, s)


@pytest.mark.parametrize(
    "n,L,s,expected", [(3, 2, 1, 15), (3, 1, 1, 3), (2, 1, 0, 2), (2, 2, 1, 4)]
)
def test_granularity_known_values(n, L, s, expected):
    assert granularity(n, L, s) == expected
    assert brute_force_granularity(n, L, s) == expected


@pytest.mark.parametrize("n,L,s", [(4, 2, 1), (5, 2, 2), (3, 3, 1), (6, 2, 3), (2, 4, 1)])
def test_granularity_matches_brute_force(n, L, s):
    d0 = granularity(n, L, s)
    assert brute_force_granularity(n, L, s) == d0
    # any multiple must also allocate cleanly
    tree = build_tree(n, L)
    cr_allocate(tree, s, 2 * d0, seed=1)


def test_take_points_cuts_at_boundary():
    slices = (WeightedSlice(0, 5, 0.5), WeightedSlice(5, 10, 1.0))
    head, tail = take_points(slices, 4)
    assert head == (WeightedSlice(0, 4, 0.5),)
    assert tail == (WeightedSlice(4, 5, 0.5), WeightedSlice(5, 10, 1.0))
    assert slice_count(head) + slice_count(tail) == 10


def test_comp_alloc_reference_example(reference_b):
    data = [WeightedSlice(0, 15, 1.0)]
    shares = comp_alloc(data, reference_b)
    assert shares[0] == (WeightedSlice(0, 5, 0.5), WeightedSlice(5, 10, 1.0))
    assert shares[1] == (WeightedSlice(5, 10, 1.0), WeightedSlice(10, 15, -1.0))
    assert shares[2] == (WeightedSlice(0, 5, 0.5), WeightedSlice(10, 15, 1.0))


def test_comp_alloc_identity_makes_disjoint_thirds():
    B = build_encoding(3, 0, seed=0)
    shares = comp_alloc([WeightedSlice(0, 9, 1.0)], B)
    assert shares == [
        (WeightedSlice(0, 3, 1.0),),
        (WeightedSlice(3, 6, 1.0),),
        (WeightedSlice(6, 9, 1.0),),
    ]


def test_comp_alloc_composes_weights(reference_b):
    # incoming weight 1/2 meeting the row entry -1 must produce -1/2
    data = [WeightedSlice(0, 15, 0.5)]
    shares = comp_alloc(data, reference_b)
    assert WeightedSlice(10, 15, -0.5) in shares[1]


def test_comp_alloc_divisibility_error(reference_b):
    with pytest.raises(AllocationError, match="split"):
        comp_alloc([WeightedSlice(0, 14, 1.0)], reference_b)


def test_uniform_partition_spans_weight_boundaries():
    slices = (WeightedSlice(4, 5, 0.5), WeightedSlice(5, 10, 1.0))
    parts = uniform_partition(slices, 3)
    assert parts[0] == (WeightedSlice(4, 5, 0.5), WeightedSlice(5, 6, 1.0))
    assert parts[1] == (WeightedSlice(6, 8, 1.0),)
    assert parts[2] == (WeightedSlice(8, 10, 1.0),)


def test_allocation_reference_walkthrough(reference_b):
    tree = build_tree(3, 2)
    assignment = cr_allocate(tree, 1, 15, B=reference_b)
    assert assignment.points_per_node == 4
    for node in tree.workers():
        assert slice_count(assignment.local[node]) == 4
    assert assignment.subtree[NodeId(1, 1)] == (
        WeightedSlice(0, 5, 0.5),
        WeightedSlice(5, 10, 1.0),
    )
    assert assignment.local[NodeId(1, 1)] == (WeightedSlice(0, 4, 0.5),)
    assert assignment.passdown[NodeId(1, 1)] == (
        WeightedSlice(4, 5, 0.5),
        WeightedSlice(5, 10, 1.0),
    )
    # bottom-layer shares carry the multiplied coefficients {1/2, 1} down
    assert assignment.local[NodeId(2, 1)] == (
        WeightedSlice(4, 5, 0.25),
        WeightedSlice(5, 6, 0.5),
        WeightedSlice(6, 8, 1.0),
    )
    assert assignment.local[NodeId(2, 2)] == (
        WeightedSlice(6, 8, 1.0),
        WeightedSlice(8, 10, -1.0),
    )
    assert assignment.local[NodeId(2, 3)] == (
        WeightedSlice(4, 5, 0.25),
        WeightedSlice(5, 6, 0.5),
        WeightedSlice(8, 10, 1.0),
    )


def test_allocation_scales_with_dataset(reference_b):
    tree = build_tree(3, 2)
    assignment = cr_allocate(tree, 1, 30, B=reference_b)
    for node in tree.workers():
        assert slice_count(assignment.local[node]) == 8


def test_uncoded_allocation_partitions_cleanly():
    tree = build_tree(3, 2)
    assignment = cr_allocate(tree, 0, 12, seed=0)
    seen = np.zeros(12)
    for node in tree.workers():
        for s in assignment.local[node]:
            assert s.weight == 1.0
            seen[s.start : s.stop] += 1
        assert slice_count(assignment.local[node]) == 1
    np.testing.assert_array_equal(seen, np.ones(12))


def test_layer1_redundancy_is_s_plus_1():
    tree = build_tree(4, 2)
    s = 1
    assignment = cr_allocate(tree, s, 24, seed=5)
    cover = np.zeros(24, dtype=int)
    for i in range(1, 5):
        for sl in assignment.subtree[NodeId(1, i)]:
            cover[sl.start : sl.stop] += 1
    np.testing.assert_array_equal(cover, np.full(24, s + 1))


def test_equal_load_over_random_configurations():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n = int(rng.integers(2, 7))
        L = int(rng.integers(1, 4))
        s = int(rng.integers(0, n))
        d0 = granularity(n, L, s)
        d = d0 * int(rng.integers(1, 4))
        tree = build_tree(n, L)
        assignment = cr_allocate(tree, s, d, seed=int(rng.integers(1_000_000)))
        expected = r_cr(n, L, s) * d
        assert expected.denominator == 1
        for node in tree.workers():
            assert slice_count(assignment.local[node]) == int(expected)


def test_granularity_violation_rejected():
    tree = build_tree(3, 2)
    with pytest.raises(AllocationError, match="granularity"):
        cr_allocate(tree, 1, 16, seed=0)


def test_csv_dump_is_parseable(tmp_path, reference_b):
    tree = build_tree(3, 2)
    assignment = cr_allocate(tree, 1, 15, B=reference_b)
    path = tmp_path / "assignment.csv"
    assignment_to_csv(assignment, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    per_node = {}
    for row in rows:
        key = (int(row["node_layer"]), int(row["node_index"]))
        per_node.setdefault(key, 0)
        per_node[key] += int(row["range_end"]) - int(row["range_start"])
    assert set(per_node.values()) == {4}
    assert len(per_node) == 12
