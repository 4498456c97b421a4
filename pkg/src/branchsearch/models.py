"""Refinement classifiers trained on user-labeled codes.

Four kinds, all CART-style trees over uint8 code space with weighted Gini
splits:

* ``dbranch`` -- one tree whose positive leaves are extracted as boxes and
  evaluated through k-d tree range queries,
* ``dbranch_ensemble`` -- 25 bootstrap members, same box-backed inference,
* ``dtree`` / ``rforest`` -- the classical counterparts, deliberately
  scan-only so their query times contrast with the index-backed kinds.

The load-bearing contract is index/scan equivalence: for box-capable models
``search_positives`` must return exactly the rows (and scores) that a full
catalog scan classifies positive.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .catalog import QuantizedCatalog
from .index import Box, KdTree, range_query_many

MODEL_KINDS = ("dbranch", "dbranch_ensemble", "dtree", "rforest")
BOX_CAPABLE_KINDS = ("dbranch", "dbranch_ensemble")
DEFAULT_ENSEMBLE_SIZE = 25


class UnsupportedModelOperation(RuntimeError):
    """Raised when box extraction is requested from a scan-only model kind."""


@dataclass(frozen=True)
class TreeHyper:
    """Growth hyperparameters shared by all four kinds."""

    max_depth: int = 12
    min_samples_leaf: int = 1
    n_members: int = DEFAULT_ENSEMBLE_SIZE  # ensemble kinds only

    def __post_init__(self):
        if self.max_depth < 1 or self.min_samples_leaf < 1 or self.n_members < 1:
            raise ValueError("tree hyperparameters must be >= 1")


@dataclass
class LabeledSet:
    """Training rows: code vectors, boolean labels (True = positive), weights."""

    codes: np.ndarray  # (m, d) uint8
    labels: np.ndarray  # (m,) bool
    weights: np.ndarray  # (m,) float64, all > 0

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=bool)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        m = self.codes.shape[0]
        if self.codes.ndim != 2:
            raise ValueError("codes must be (m, d)")
        if self.labels.shape != (m,) or self.weights.shape != (m,):
            raise ValueError("labels/weights must align with codes rows")
        if not self.labels.any() or self.labels.all():
            raise ValueError("labeled set needs at least one positive and one negative")
        if not np.isfinite(self.weights).all() or np.any(self.weights <= 0):
            raise ValueError("weights must be finite and > 0")

    @property
    def dim(self) -> int:
        return self.codes.shape[1]


@dataclass
class DecisionTree:
    """One grown tree as flat arrays; leaves have feature == -1."""

    feature: np.ndarray  # (m,) int16
    threshold: np.ndarray  # (m,) int16; go left iff x[feature] <= threshold
    left: np.ndarray  # (m,) int32
    right: np.ndarray  # (m,) int32
    score: np.ndarray  # (m,) float64 weighted positive fraction (leaves)

    def leaf_label(self, node: int) -> bool:
        return bool(self.score[node] > 0.5)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf ids for a batch of code vectors (vectorized masked routing)."""
        X = np.atleast_2d(X)
        out = np.empty(X.shape[0], dtype=np.int32)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0:
                out[idx] = node
                continue
            go_left = X[idx, self.feature[node]] <= self.threshold[node]
            stack.append((int(self.left[node]), idx[go_left]))
            stack.append((int(self.right[node]), idx[~go_left]))
        return out


@dataclass
class BranchModel:
    kind: str
    trees: list[DecisionTree]
    dim: int
    hyper: TreeHyper = field(default_factory=TreeHyper)

    @property
    def n_members(self) -> int:
        return len(self.trees)

    @property
    def supports_boxes(self) -> bool:
        return self.kind in BOX_CAPABLE_KINDS


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    hyper: TreeHyper,
    rng: np.random.Generator | None,
    n_features_per_split: int | None,
) -> DecisionTree:
    """CART growth with weighted Gini; deterministic tie-breaks
    (lowest feature index, then lowest threshold)."""
    d = X.shape[1]
    feature: list[int] = []
    threshold: list[int] = []
    left: list[int] = []
    right: list[int] = []
    score: list[float] = []

    def new_node(pos_w: float, tot_w: float) -> int:
        feature.append(-1)
        threshold.append(0)
        left.append(-1)
        right.append(-1)
        score.append(pos_w / tot_w)
        return len(feature) - 1

    def grow(idx: np.ndarray, depth: int) -> int:
        sub_w = w[idx]
        tot_w = float(sub_w.sum())
        pos_w = float(sub_w[y[idx]].sum())
        node = new_node(pos_w, tot_w)

        pure = pos_w == 0.0 or pos_w == tot_w
        if depth >= hyper.max_depth or pure or len(idx) < 2 * hyper.min_samples_leaf:
            return node

        if n_features_per_split is not None and n_features_per_split < d:
            cand_feats = np.sort(rng.choice(d, size=n_features_per_split, replace=False))
        else:
            cand_feats = np.arange(d)

        best = None  # (impurity, feat, thr, n_left)
        for f in cand_feats:
            vals = X[idx, f]
            order = np.argsort(vals, kind="stable")
            sv = vals[order]
            cw = np.cumsum(sub_w[order])
            cpw = np.cumsum((sub_w * y[idx])[order])
            cut = np.nonzero(sv[:-1] != sv[1:])[0]  # split after position i
            if cut.size == 0:
                continue
            counts_left = cut + 1
            ok = (counts_left >= hyper.min_samples_leaf) & (
                len(idx) - counts_left >= hyper.min_samples_leaf
            )
            cut = cut[ok]
            if cut.size == 0:
                continue
            wl, pl = cw[cut], cpw[cut]
            wr, pr = tot_w - wl, pos_w - pl
            # summed weighted Gini of the two children (lower is better)
            impurity = 2.0 * (pl * (wl - pl) / wl + pr * (wr - pr) / wr)
            j = int(np.argmin(impurity))  # first minimum -> lowest threshold
            if best is None or impurity[j] < best[0]:
                # integer midpoint of the boundary gap; any value in the gap
                # splits the training rows identically
                thr = (int(sv[cut[j]]) + int(sv[cut[j] + 1])) // 2
                best = (float(impurity[j]), int(f), thr, int(cut[j]) + 1)

        if best is None:
            return node  # all candidate features constant

        _, f, thr, _ = best
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int16),
        threshold=np.asarray(threshold, dtype=np.int16),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        score=np.asarray(score, dtype=np.float64),
    )


def train(
    data: LabeledSet,
    kind: str,
    seed: int = 0,
    hyper: TreeHyper | None = None,
) -> BranchModel:
    """Train one of the four model kinds; deterministic under fixed seed.

    Ensemble kinds grow ``hyper.n_members`` trees on bootstrap resamples;
    the forest additionally samples sqrt(d) features per split. Bootstrap
    members that happen to draw a single class degrade to one-leaf trees,
    which is fine -- only the user-provided set must contain both classes.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}, expected one of {MODEL_KINDS}")
    hyper = hyper or TreeHyper()
    X, y, w = data.codes, data.labels, data.weights
    d = data.dim

    if kind in ("dbranch", "dtree"):
        trees = [_grow_tree(X, y, w, hyper, None, None)]
    else:
        # stratified bootstrap: every member keeps all (scarce) positives and
        # draws a fresh bootstrap of the negatives, so no member is starved
        # of the class it exists to find
        pos_idx = np.nonzero(y)[0]
        neg_idx = np.nonzero(~y)[0]
        n_feats = max(1, int(np.sqrt(d))) if kind == "rforest" else None
        seeds = np.random.SeedSequence(seed).spawn(hyper.n_members)
        trees = []
        for child in seeds:
            rng = np.random.default_rng(child)
            rows = np.concatenate([pos_idx, rng.choice(neg_idx, size=neg_idx.size, replace=True)])
            trees.append(_grow_tree(X[rows], y[rows], w[rows], hyper, rng, n_feats))
    return BranchModel(kind=kind, trees=trees, dim=d, hyper=hyper)


def extract_positive_boxes(model: BranchModel) -> list[Box]:
    """Boxes of all positive leaves, read off the root-to-leaf split paths.

    For ensembles this concatenates every member's boxes (boxes of a single
    tree are pairwise disjoint; across members they may overlap). Scan-only
    kinds raise UnsupportedModelOperation.
    """
    if not model.supports_boxes:
        raise UnsupportedModelOperation(
            f"model kind {model.kind!r} does not support box extraction"
        )
    boxes: list[Box] = []
    for tree in model.trees:
        boxes.extend(box for box, _ in _tree_boxes(tree, model.dim))
    return boxes


def _tree_boxes(tree: DecisionTree, dim: int) -> list[tuple[Box, float]]:
    """(box, leaf score) for every positive leaf of one tree."""
    boxes = []
    stack = [(0, np.zeros(dim, dtype=np.int16), np.full(dim, 255, dtype=np.int16))]
    while stack:
        node, lo, hi = stack.pop()
        f = int(tree.feature[node])
        if f < 0:
            if tree.leaf_label(node):
                boxes.append((Box(lo, hi), float(tree.score[node])))
            continue
        t = int(tree.threshold[node])
        lo_l, hi_l = lo.copy(), hi.copy()
        hi_l[f] = min(hi_l[f], t)
        lo_r, hi_r = lo.copy(), hi.copy()
        lo_r[f] = max(lo_r[f], t + 1)
        stack.append((int(tree.right[node]), lo_r, hi_r))
        stack.append((int(tree.left[node]), lo_l, hi_l))
    return boxes


def predict_batch(model: BranchModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(labels, scores) for a batch of code vectors.

    Single tree: leaf class and weighted positive fraction. Ensembles:
    strict-majority vote, score = mean of member leaf scores.
    """
    X = np.atleast_2d(np.ascontiguousarray(X, dtype=np.uint8))
    votes = np.zeros(X.shape[0], dtype=np.int32)
    scores = np.zeros(X.shape[0], dtype=np.float64)
    for tree in model.trees:
        leaves = tree.apply(X)
        leaf_scores = tree.score[leaves]
        votes += (leaf_scores > 0.5).astype(np.int32)
        scores += leaf_scores
    scores /= model.n_members
    labels = votes * 2 > model.n_members
    return labels, scores


def predict_point(model: BranchModel, code: np.ndarray) -> tuple[bool, float]:
    labels, scores = predict_batch(model, np.asarray(code).reshape(1, -1))
    return bool(labels[0]), float(scores[0])


def _ranked(rows: np.ndarray, scores: np.ndarray) -> list[tuple[int, float]]:
    order = np.lexsort((rows, -scores))  # score desc, then row asc
    return list(zip(rows[order].tolist(), scores[order].tolist()))


def search_positives(
    model: BranchModel,
    tree: KdTree,
    catalog: QuantizedCatalog,
    timing: dict | None = None,
) -> list[tuple[int, float]]:
    """Index-accelerated whole-catalog classification for box-capable kinds.

    The candidate set is the union of range-query hits over every member's
    positive boxes. A single tree needs no re-scoring (its candidates are
    exactly its positives, with the leaf score attached to each box); for
    ensembles, member votes are counted from the box hits and the majority
    winners re-scored. Returns (row, score) sorted by descending score,
    ties by ascending row -- by construction identical to
    :func:`scan_positives`.
    """
    if not model.supports_boxes:
        raise UnsupportedModelOperation(
            f"model kind {model.kind!r} does not support index-backed search"
        )
    t0 = time.perf_counter()

    boxes: list[Box] = []
    box_scores: list[float] = []
    for member in model.trees:
        for box, leaf_score in _tree_boxes(member, model.dim):
            boxes.append(box)
            box_scores.append(leaf_score)
    hit_rows, hit_boxes = range_query_many(tree, boxes)

    if model.n_members == 1:
        # boxes of one tree are disjoint: hits are the positives, score known
        rows = hit_rows
        scores = np.asarray(box_scores)[hit_boxes] if hit_rows.size else np.empty(0)
        n_candidates = int(rows.size)
    else:
        # a row is hit at most once per member, so every hit is one vote
        votes = np.bincount(hit_rows, minlength=catalog.n)
        candidates = np.nonzero(votes)[0]
        n_candidates = int(candidates.size)
        winners = candidates[votes[candidates] * 2 > model.n_members]
        if winners.size:
            _, scores = predict_batch(model, catalog.codes[winners])
            rows = winners
        else:
            rows = np.empty(0, dtype=np.int64)
            scores = np.empty(0, dtype=np.float64)

    result = _ranked(rows, scores)
    if timing is not None:
        timing["elapsed_ms"] = (time.perf_counter() - t0) * 1000.0
        timing["n_candidates"] = n_candidates
    return result


def scan_positives(
    model: BranchModel,
    catalog: QuantizedCatalog,
    timing: dict | None = None,
) -> list[tuple[int, float]]:
    """Full-catalog classification by applying the model to every row."""
    t0 = time.perf_counter()
    labels, scores = predict_batch(model, catalog.codes)
    rows = np.nonzero(labels)[0].astype(np.int64)
    result = _ranked(rows, scores[labels])
    if timing is not None:
        timing["elapsed_ms"] = (time.perf_counter() - t0) * 1000.0
        timing["n_candidates"] = int(catalog.n)
    return result


def serialize_model(model: BranchModel) -> bytes:
    """Canonical byte representation (used for determinism checks)."""
    parts = [model.kind.encode(), model.dim.to_bytes(4, "little"), len(model.trees).to_bytes(4, "little")]
    for tree in model.trees:
        for arr, dt in (
            (tree.feature, "<i2"),
            (tree.threshold, "<i2"),
            (tree.left, "<i4"),
            (tree.right, "<i4"),
            (tree.score, "<f8"),
        ):
            parts.append(np.asarray(arr).astype(dt).tobytes())
    return b"".join(parts)
