"""Immutable k-d tree over uint8 code space.

Supports the two query shapes the engine needs: k-nearest-neighbour search
(exact, or approximate under a visited-leaf budget) for the initial query,
and orthogonal range queries over axis-aligned boxes for classifier
inference. Distances are Euclidean on the raw integer codes.

The tree is stored as flat node arrays in preorder. Every node owns a
contiguous slice of ``order`` (the permuted catalog row indices), so a
subtree fully contained in a query box is emitted without scanning it.
Construction is deterministic: widest-spread split dimension (lowest index
on ties), lower-median split value, leaf rows sorted ascending.
"""

from __future__ import annotations

import heapq
import math
import os
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .catalog import QuantizedCatalog

TREE_MAGIC = b"CBKD"
TREE_VERSION = 1
DEFAULT_LEAF_SIZE = 32

_TREE_HEADER = struct.Struct("<4sHHQII")  # magic, version, d, n, leaf_size, n_nodes


class TreeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    """Axis-aligned inclusive box in code space; bounds live in [0, 255]."""

    lower: np.ndarray  # (d,) int16
    upper: np.ndarray  # (d,) int16

    def __post_init__(self):
        lower = np.ascontiguousarray(self.lower, dtype=np.int16)
        upper = np.ascontiguousarray(self.upper, dtype=np.int16)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(lower > upper):
            raise ValueError("box has lower[j] > upper[j]")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @staticmethod
    def full(dim: int) -> "Box":
        """The whole code space (every bound unbounded)."""
        return Box(np.zeros(dim, dtype=np.int16), np.full(dim, 255, dtype=np.int16))

    def bounds_u8(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounds clipped onto the uint8 grid (queries over u8 codes see no
        difference, and native-width compares avoid widening copies)."""
        return (
            np.clip(self.lower, 0, 255).astype(np.uint8),
            np.clip(self.upper, 0, 255).astype(np.uint8),
        )

    def contains(self, codes: np.ndarray) -> np.ndarray:
        """Boolean mask of which code vectors (rows) lie inside the box."""
        c = np.atleast_2d(codes)
        if c.dtype == np.uint8:
            lo, up = self.bounds_u8()
            return np.all((c >= lo) & (c <= up), axis=1)
        return np.all((c >= self.lower) & (c <= self.upper), axis=1)


@dataclass
class RangeStats:
    """Instrumentation for one range query."""

    leaves_scanned: int = 0
    nodes_visited: int = 0
    subtrees_emitted: int = 0


@dataclass(frozen=True)
class KdTree:
    codes: np.ndarray  # (n, d) uint8 -- the indexed catalog codes
    leaf_size: int
    # node arrays, preorder; children of internal node i are left[i], right[i]
    split_dim: np.ndarray  # (m,) int16, -1 for leaves
    split_val: np.ndarray  # (m,) uint8; left subtree: code[dim] <= val
    left: np.ndarray  # (m,) int32, -1 for leaves
    right: np.ndarray  # (m,) int32
    start: np.ndarray  # (m,) int64, subtree slice [start, end) into order
    end: np.ndarray  # (m,) int64
    bbox_lo: np.ndarray  # (m, d) uint8
    bbox_hi: np.ndarray  # (m, d) uint8
    order: np.ndarray  # (n,) int64 permutation of row indices

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.split_dim.shape[0]

    @cached_property
    def codes_ordered(self) -> np.ndarray:
        """Codes permuted into traversal order, so every subtree's points are
        one contiguous block (sequential reads during leaf scans)."""
        return np.ascontiguousarray(self.codes[self.order])

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def knn(self, query, k, max_leaves=None):
        return knn(self, query, k, max_leaves=max_leaves)

    def range_query(self, box, stats=None):
        return range_query(self, box, stats=stats)


def build(catalog: QuantizedCatalog | np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE) -> KdTree:
    """Build a balanced k-d tree over catalog codes.

    Splits on the dimension with the widest code spread, at the lower median
    value; nodes whose points are all identical become leaves regardless of
    leaf_size. Deterministic for fixed input.
    """
    codes = catalog.codes if isinstance(catalog, QuantizedCatalog) else catalog
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    if codes.ndim != 2 or codes.shape[0] < 1:
        raise ValueError("cannot build an index over an empty catalog")
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")

    n, d = codes.shape
    order = np.arange(n, dtype=np.int64)

    split_dim: list[int] = []
    split_val: list[int] = []
    left: list[int] = []
    right: list[int] = []
    starts: list[int] = []
    ends: list[int] = []
    los: list[np.ndarray] = []
    his: list[np.ndarray] = []

    def grow(start: int, end: int) -> int:
        node = len(split_dim)
        split_dim.append(-1)
        split_val.append(0)
        left.append(-1)
        right.append(-1)
        starts.append(start)
        ends.append(end)

        sub = codes[order[start:end]]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        los.append(lo)
        his.append(hi)

        m = end - start
        spread = hi.astype(np.int16) - lo.astype(np.int16)
        if m <= leaf_size or not spread.any():
            order[start:end] = np.sort(order[start:end])
            return node

        dim = int(np.argmax(spread))  # first max -> lowest dimension on ties
        vals = sub[:, dim]
        s = int(np.partition(vals, (m - 1) // 2)[(m - 1) // 2])
        if s == int(hi[dim]):
            # lower median equals the max: step down so the right side is non-empty
            s = int(vals[vals < s].max())
        mask = vals <= s
        n_left = int(np.count_nonzero(mask))
        merged = np.concatenate([order[start:end][mask], order[start:end][~mask]])
        order[start:end] = merged

        split_dim[node] = dim
        split_val[node] = s
        left[node] = grow(start, start + n_left)
        right[node] = grow(start + n_left, end)
        return node

    grow(0, n)
    return KdTree(
        codes=codes,
        leaf_size=leaf_size,
        split_dim=np.asarray(split_dim, dtype=np.int16),
        split_val=np.asarray(split_val, dtype=np.uint8),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        start=np.asarray(starts, dtype=np.int64),
        end=np.asarray(ends, dtype=np.int64),
        bbox_lo=np.asarray(los, dtype=np.uint8),
        bbox_hi=np.asarray(his, dtype=np.uint8),
        order=order,
    )


def _min_dist_sq(query: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> int:
    below = lo.astype(np.int64) - query
    above = query - hi.astype(np.int64)
    gap = np.maximum(np.maximum(below, above), 0)
    return int(np.dot(gap, gap))


def knn(
    tree: KdTree,
    query: np.ndarray,
    k: int,
    max_leaves: int | None = None,
) -> list[tuple[int, float]]:
    """k nearest catalog rows to a code-space query, sorted by (distance, row).

    Exact when ``max_leaves`` is None: best-first traversal with bounding-box
    pruning, ties broken by lower row index. With a budget, at most
    ``max_leaves`` leaves are scanned and the best k found are returned;
    a budget covering all leaves is equivalent to exact mode. Asking for
    k > n returns all n rows.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query)
    if q.ndim != 1 or q.shape[0] != tree.dim:
        raise ValueError(f"query must be a {tree.dim}-dim code vector")
    q64 = q.astype(np.int64)

    # worst kept entry sits on top of this max-heap (negated lexicographic key)
    best: list[tuple[int, int]] = []  # (-dist_sq, -row)

    def worst() -> tuple[int, int]:
        return (-best[0][0], -best[0][1])

    pending = [(_min_dist_sq(q64, tree.bbox_lo[0], tree.bbox_hi[0]), 0)]
    leaves_scanned = 0
    while pending:
        mindist, node = heapq.heappop(pending)
        if len(best) == k and mindist > worst()[0]:
            break
        if tree.is_leaf(node):
            if max_leaves is not None and leaves_scanned >= max_leaves:
                break
            leaves_scanned += 1
            rows = tree.order[tree.start[node] : tree.end[node]]
            diffs = tree.codes[rows].astype(np.int64) - q64
            d2s = np.einsum("ij,ij->i", diffs, diffs)
            for row, d2 in zip(rows.tolist(), d2s.tolist()):
                cand = (d2, row)
                if len(best) < k:
                    heapq.heappush(best, (-d2, -row))
                elif cand < worst():
                    heapq.heapreplace(best, (-d2, -row))
        else:
            for child in (tree.left[node], tree.right[node]):
                child_min = _min_dist_sq(q64, tree.bbox_lo[child], tree.bbox_hi[child])
                if len(best) < k or child_min <= worst()[0]:
                    heapq.heappush(pending, (child_min, int(child)))

    found = sorted((-nd2, -nrow) for nd2, nrow in best)
    return [(row, math.sqrt(d2)) for d2, row in found]


def _multi_arange(starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Concatenation of arange(starts[i], ends[i]) without a Python loop."""
    lens = ends - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.repeat(starts - np.concatenate(([0], np.cumsum(lens)[:-1])), lens)
    return np.arange(total, dtype=np.int64) + offsets


def _multi_slice(order: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Concatenate order[starts[i]:ends[i]] for all i without a Python loop."""
    return order[_multi_arange(starts, ends)]


def range_query(tree: KdTree, box: Box, stats: RangeStats | None = None) -> np.ndarray:
    """All catalog rows whose codes lie inside the box, ascending row index.

    Level-synchronous traversal: each round tests one frontier of nodes
    against the box in bulk using the nodes' data bounding boxes. Disjoint
    subtrees are pruned; fully covered subtrees are emitted via their
    contiguous order slices without scanning points; partially overlapping
    leaves are scanned in one vectorized pass at the end.
    """
    if box.dim != tree.dim:
        raise ValueError(f"box has {box.dim} dims, tree expects {tree.dim}")
    lo_q, up_q = box.bounds_u8()

    emit_nodes: list[np.ndarray] = []
    leaf_nodes: list[np.ndarray] = []
    frontier = np.zeros(1, dtype=np.int64)
    while frontier.size:
        if stats is not None:
            stats.nodes_visited += frontier.size
        nlo = tree.bbox_lo[frontier]
        nhi = tree.bbox_hi[frontier]
        overlap = np.all(nlo <= up_q, axis=1) & np.all(nhi >= lo_q, axis=1)
        contained = overlap & np.all((nlo >= lo_q) & (nhi <= up_q), axis=1)

        if np.any(contained):
            emit_nodes.append(frontier[contained])
            if stats is not None:
                stats.subtrees_emitted += int(np.count_nonzero(contained))

        partial = frontier[overlap & ~contained]
        is_leaf = tree.left[partial] < 0
        if np.any(is_leaf):
            leaf_nodes.append(partial[is_leaf])
        inner = partial[~is_leaf]
        frontier = np.concatenate([tree.left[inner], tree.right[inner]]).astype(np.int64)

    chunks = []
    if emit_nodes:
        nodes = np.concatenate(emit_nodes)
        chunks.append(_multi_slice(tree.order, tree.start[nodes], tree.end[nodes]))
    if leaf_nodes:
        leaves = np.concatenate(leaf_nodes)
        if stats is not None:
            stats.leaves_scanned += leaves.size
        positions = _multi_arange(tree.start[leaves], tree.end[leaves])
        mask = box.contains(tree.codes_ordered[positions])
        if mask.any():
            chunks.append(tree.order[positions[mask]])

    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(chunks))


def range_query_many(
    tree: KdTree,
    boxes: list[Box],
    stats: RangeStats | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched range queries: one traversal for many boxes.

    Returns (rows, box_ids) pairs, one entry per (row inside box) hit, in no
    particular order. Equivalent to concatenating :func:`range_query` results
    per box, but the frontier holds (node, box) pairs so the per-level work
    is shared across boxes.
    """
    if not boxes:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    bounds = [b.bounds_u8() for b in boxes]
    lo_all = np.stack([lo for lo, _ in bounds])  # (B, d) uint8
    up_all = np.stack([up for _, up in bounds])

    nodes = np.zeros(len(boxes), dtype=np.int64)
    bids = np.arange(len(boxes), dtype=np.int64)
    emit_n: list[np.ndarray] = []
    emit_b: list[np.ndarray] = []
    leaf_n: list[np.ndarray] = []
    leaf_b: list[np.ndarray] = []
    while nodes.size:
        if stats is not None:
            stats.nodes_visited += nodes.size
        nlo = tree.bbox_lo[nodes]
        nhi = tree.bbox_hi[nodes]
        blo = lo_all[bids]
        bup = up_all[bids]
        overlap = np.all(nlo <= bup, axis=1) & np.all(nhi >= blo, axis=1)
        contained = overlap & np.all(nlo >= blo, axis=1) & np.all(nhi <= bup, axis=1)

        if np.any(contained):
            emit_n.append(nodes[contained])
            emit_b.append(bids[contained])
            if stats is not None:
                stats.subtrees_emitted += int(np.count_nonzero(contained))

        partial = overlap & ~contained
        pn, pb = nodes[partial], bids[partial]
        is_leaf = tree.left[pn] < 0
        if np.any(is_leaf):
            leaf_n.append(pn[is_leaf])
            leaf_b.append(pb[is_leaf])
        inner_n, inner_b = pn[~is_leaf], pb[~is_leaf]
        nodes = np.concatenate([tree.left[inner_n], tree.right[inner_n]]).astype(np.int64)
        bids = np.concatenate([inner_b, inner_b])

    pos_chunks: list[np.ndarray] = []  # positions in traversal order
    bid_chunks: list[np.ndarray] = []
    if emit_n:
        en = np.concatenate(emit_n)
        eb = np.concatenate(emit_b)
        lens = tree.end[en] - tree.start[en]
        pos_chunks.append(_multi_arange(tree.start[en], tree.end[en]))
        bid_chunks.append(np.repeat(eb, lens))
    if leaf_n:
        ln = np.concatenate(leaf_n)
        lb = np.concatenate(leaf_b)
        if stats is not None:
            stats.leaves_scanned += ln.size
        lens = tree.end[ln] - tree.start[ln]
        positions = _multi_arange(tree.start[ln], tree.end[ln])
        rbid = np.repeat(lb, lens)
        c = tree.codes_ordered[positions]  # contiguous runs: sequential reads
        inside = np.all((c >= lo_all[rbid]) & (c <= up_all[rbid]), axis=1)
        pos_chunks.append(positions[inside])
        bid_chunks.append(rbid[inside])

    if not pos_chunks:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return tree.order[np.concatenate(pos_chunks)], np.concatenate(bid_chunks)


def write_tree(tree: KdTree, path: str | os.PathLike) -> None:
    """Serialize a tree (sans codes: those live in the catalog) to a CBKD file."""
    m = tree.n_nodes
    parts = [
        _TREE_HEADER.pack(TREE_MAGIC, TREE_VERSION, tree.dim, tree.n, tree.leaf_size, m),
        tree.split_dim.astype("<i2").tobytes(),
        tree.split_val.astype(np.uint8).tobytes(),
        tree.left.astype("<i4").tobytes(),
        tree.right.astype("<i4").tobytes(),
        tree.start.astype("<i8").tobytes(),
        tree.end.astype("<i8").tobytes(),
        np.ascontiguousarray(tree.bbox_lo).tobytes(),
        np.ascontiguousarray(tree.bbox_hi).tobytes(),
        tree.order.astype("<i8").tobytes(),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_tree(path: str | os.PathLike, catalog: QuantizedCatalog | np.ndarray) -> KdTree:
    """Load a CBKD file; the catalog supplies the codes the tree was built over."""
    codes = catalog.codes if isinstance(catalog, QuantizedCatalog) else catalog
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _TREE_HEADER.size:
        raise TreeFormatError(f"{path}: file too short for header")
    magic, version, d, n, leaf_size, m = _TREE_HEADER.unpack_from(raw)
    if magic != TREE_MAGIC:
        raise TreeFormatError(f"{path}: bad magic {magic!r}")
    if version != TREE_VERSION:
        raise TreeFormatError(f"{path}: unsupported version {version}")
    if codes.shape != (n, d):
        raise TreeFormatError(
            f"{path}: tree built over {n}x{d} codes, catalog has {codes.shape}"
        )

    off = _TREE_HEADER.size
    expected = off + m * (2 + 1 + 4 + 4 + 8 + 8) + 2 * m * d + 8 * n
    if len(raw) != expected:
        raise TreeFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")

    def take(dtype, count, shape=None):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
        off += arr.nbytes
        return arr.reshape(shape) if shape else arr

    return KdTree(
        codes=codes,
        leaf_size=leaf_size,
        split_dim=take("<i2", m),
        split_val=take(np.uint8, m),
        left=take("<i4", m),
        right=take("<i4", m),
        start=take("<i8", m),
        end=take("<i8", m),
        bbox_lo=take(np.uint8, m * d, (m, d)),
        bbox_hi=take(np.uint8, m * d, (m, d)),
        order=take("<i8", n),
    )
