import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from branchsearch import index
from branchsearch.index import Box, RangeStats, build, knn, range_query, range_query_many
from branchsearch.synthetic import random_catalog


def brute_knn(codes, query, k):
    d = np.linalg.norm(codes.astype(np.int64) - query.astype(np.int64), axis=1)
    order = np.lexsort((np.arange(len(codes)), d))
    return [(int(i), float(d[i])) for i in order[:k]]


def brute_range(codes, box):
    mask = np.all(
        (codes.astype(np.int16) >= box.lower) & (codes.astype(np.int16) <= box.upper),
        axis=1,
    )
    return np.nonzero(mask)[0]


def random_box(rng, dim):
    lo = rng.integers(0, 200, size=dim)
    width = rng.integers(5, 255, size=dim)
    hi = np.minimum(lo + width, 255)
    # loosen most dims so boxes have a chance of matching something
    open_dims = rng.random(dim) < 0.7
    lo[open_dims] = 0
    hi[open_dims] = 255
    return Box(lo.astype(np.int16), hi.astype(np.int16))


class TestBuild:
    def test_single_row_single_leaf(self):
        tree = build(np.zeros((1, 4), np.uint8))
        assert tree.n_nodes == 1 and tree.is_leaf(0)
        assert list(tree.order) == [0]

    def test_exactly_leaf_size_no_split(self):
        rng = np.random.default_rng(0)
        tree = build(rng.integers(0, 256, (32, 8)).astype(np.uint8), leaf_size=32)
        assert tree.n_nodes == 1

    def test_identical_points_become_leaf(self):
        tree = build(np.full((100, 4), 7, np.uint8), leaf_size=8)
        assert tree.n_nodes == 1

    def test_structural_invariant_on_random_rows(self):
        cat = random_catalog(10_000, 16, seed=5)
        tree = build(cat, leaf_size=16)
        seen = np.zeros(cat.n, dtype=int)

        def walk(node):
            lo, hi = tree.start[node], tree.end[node]
            if tree.is_leaf(node):
                rows = tree.order[lo:hi]
                seen[rows] += 1
                assert list(rows) == sorted(rows)
                return
            dim, val = tree.split_dim[node], tree.split_val[node]
            left, right = tree.left[node], tree.right[node]
            assert (tree.start[left], tree.end[right]) == (lo, hi)
            assert tree.end[left] == tree.start[right]
            assert tree.codes[tree.order[lo : tree.end[left]], dim].max() <= val
            assert tree.codes[tree.order[tree.start[right] : hi], dim].min() > val
            walk(left)
            walk(right)

        walk(0)
        assert np.all(seen == 1)  # every row in exactly one leaf

    def test_empty_catalog_rejected(self):
        with pytest.raises(ValueError):
            build(np.zeros((0, 4), np.uint8))


class TestKnn:
    def test_exact_row_query_is_first_at_zero(self):
        cat = random_catalog(500, 8, seed=1)
        tree = build(cat, leaf_size=8)
        hits = knn(tree, cat.codes[123], 3)
        assert hits[0] == (123, 0.0)

    def test_exact_matches_brute_force_2000_rows(self):
        cat = random_catalog(2000, 12, seed=2)
        tree = build(cat, leaf_size=16)
        rng = np.random.default_rng(3)
        for _ in range(20):
            q = rng.integers(0, 256, 12).astype(np.uint8)
            assert knn(tree, q, 10) == brute_knn(cat.codes, q, 10)

    def test_k_larger_than_n_returns_all(self):
        cat = random_catalog(5, 4, seed=4)
        tree = build(cat, leaf_size=2)
        assert len(knn(tree, cat.codes[0], 50)) == 5

    def test_full_leaf_budget_equals_exact(self):
        cat = random_catalog(1500, 8, seed=6)
        tree = build(cat, leaf_size=8)
        n_leaves = int(np.count_nonzero(tree.left < 0))
        rng = np.random.default_rng(7)
        for _ in range(10):
            q = rng.integers(0, 256, 8).astype(np.uint8)
            assert knn(tree, q, 7, max_leaves=n_leaves) == knn(tree, q, 7)

    def test_tie_break_by_row_index(self):
        codes = np.zeros((6, 4), np.uint8)
        codes[3:] = 10
        tree = build(codes, leaf_size=2)
        hits = knn(tree, np.zeros(4, np.uint8), 3)
        assert [r for r, _ in hits] == [0, 1, 2]

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), k=st.integers(1, 40))
    def test_exact_property(self, seed, k):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 300))
        codes = rng.integers(0, 8, size=(n, 5)).astype(np.uint8)  # lots of ties
        tree = build(codes, leaf_size=int(rng.integers(1, 9)))
        q = rng.integers(0, 8, 5).astype(np.uint8)
        assert knn(tree, q, k) == brute_knn(codes, q, min(k, n))


class TestRangeQuery:
    def test_unbounded_box_returns_all(self):
        cat = random_catalog(777, 8, seed=8)
        tree = build(cat, leaf_size=8)
        assert list(range_query(tree, Box.full(8))) == list(range(777))

    def test_single_grid_point(self):
        codes = np.arange(40, dtype=np.uint8).reshape(-1, 1).repeat(3, axis=1)
        tree = build(codes, leaf_size=4)
        box = Box(np.full(3, 17, np.int16), np.full(3, 17, np.int16))
        assert list(range_query(tree, box)) == [17]

    def test_empty_result_is_valid(self):
        codes = np.zeros((10, 2), np.uint8)
        tree = build(codes, leaf_size=2)
        box = Box(np.array([5, 5], np.int16), np.array([9, 9], np.int16))
        assert range_query(tree, box).size == 0

    def test_matches_linear_scan_filter(self):
        cat = random_catalog(10_000, 8, seed=9)
        tree = build(cat, leaf_size=32)
        rng = np.random.default_rng(10)
        for _ in range(100):
            box = random_box(rng, 8)
            assert np.array_equal(range_query(tree, box), brute_range(cat.codes, box))

    def test_pruning_soundness(self):
        cat = random_catalog(5000, 6, seed=11)
        tree = build(cat, leaf_size=16)
        leaves = np.nonzero(tree.left < 0)[0]
        rng = np.random.default_rng(12)
        for _ in range(20):
            box = random_box(rng, 6)
            stats = RangeStats()
            range_query(tree, box, stats=stats)
            overlapping = 0
            for leaf in leaves:
                lo = tree.bbox_lo[leaf].astype(np.int16)
                hi = tree.bbox_hi[leaf].astype(np.int16)
                if np.all(lo <= box.upper) and np.all(hi >= box.lower):
                    overlapping += 1
            assert stats.leaves_scanned <= overlapping

    def test_many_matches_per_box_concatenation(self):
        cat = random_catalog(3000, 6, seed=13)
        tree = build(cat, leaf_size=16)
        rng = np.random.default_rng(14)
        boxes = [random_box(rng, 6) for _ in range(7)]
        rows, bids = range_query_many(tree, boxes)
        for b, box in enumerate(boxes):
            got = np.sort(rows[bids == b])
            assert np.array_equal(got, brute_range(cat.codes, box))


class TestSerialization:
    def test_round_trip(self, tmp_path):
        cat = random_catalog(800, 8, seed=15)
        tree = build(cat, leaf_size=8)
        path = tmp_path / "t.cbkd"
        index.write_tree(tree, path)
        back = index.read_tree(path, cat)
        assert np.array_equal(back.order, tree.order)
        assert np.array_equal(back.split_dim, tree.split_dim)
        q = cat.codes[17]
        assert knn(back, q, 5) == knn(tree, q, 5)

    def test_deterministic_build_byte_identical(self, tmp_path):
        cat = random_catalog(600, 8, seed=16)
        p1, p2 = tmp_path / "a.cbkd", tmp_path / "b.cbkd"
        index.write_tree(build(cat, leaf_size=8), p1)
        index.write_tree(build(cat, leaf_size=8), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_shape_mismatch_rejected(self, tmp_path):
        cat = random_catalog(100, 8, seed=17)
        path = tmp_path / "t.cbkd"
        index.write_tree(build(cat), path)
        other = random_catalog(100, 9, seed=18)
        with pytest.raises(index.TreeFormatError):
            index.read_tree(path, other)
