"""Search workflow orchestration: initial kNN query, label accumulation,
negative sampling, classifier training, whole-catalog retrieval, iteration.

A :class:`Session` accumulates a user's labels across refinement rounds
(latest label wins) and owns the last trained model. Each fine-tune call
builds the weighted training set, trains the chosen model kind, retrieves
the full positive set (index-accelerated for box-capable kinds, full scan
otherwise), filters out already-labeled rows, and reports timing/count
statistics.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

from . import head as head_mod
from . import models, quantizer as quant_mod
from .catalog import CatalogRecord, QuantizedCatalog
from .index import KdTree, knn
from .models import BranchModel, LabeledSet, TreeHyper

DEFAULT_K = 60
DEFAULT_KNN_LEAF_BUDGET = 128


class EngineError(ValueError):
    """User-correctable workflow errors (bad labels, unknown ids/kinds)."""


@dataclass
class Dataset:
    """Everything a query needs, shared read-only across sessions."""

    name: str
    catalog: QuantizedCatalog
    tree: KdTree
    head: head_mod.HeadParams
    quantizer: quant_mod.Quantizer


@dataclass
class FinetuneParams:
    model_kind: str = "dbranch"
    negative_samples: int = 1000
    negative_weight: float = 10.0
    seed: int = 0
    max_results: int = 500
    hyper: TreeHyper = field(default_factory=TreeHyper)

    def __post_init__(self):
        if self.model_kind not in models.MODEL_KINDS:
            raise EngineError(
                f"unknown model kind {self.model_kind!r}; choose one of {models.MODEL_KINDS}"
            )
        if self.negative_samples < 0:
            raise EngineError("negative_samples must be >= 0")
        if not self.negative_weight > 0:
            raise EngineError("negative_weight must be > 0")
        if self.max_results < 1:
            raise EngineError("max_results must be >= 1")


@dataclass
class SearchStats:
    train_ms: float
    query_ms: float
    n_candidates: int
    n_positives: int
    model_kind: str
    iteration: int
    n_negatives_sampled: int = 0
    negatives_clamped: bool = False


@dataclass
class Session:
    dataset: Dataset
    session_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    labels: dict[int, bool] = field(default_factory=dict)  # record id -> positive?
    last_model: BranchModel | None = None
    iteration: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def apply_labels(self, new_labels: dict[int, bool]) -> None:
        """Merge labels; the newest label for an id wins. Ids must exist."""
        known = self.dataset.catalog.row_of_id()
        unknown = [i for i in new_labels if i not in known]
        if unknown:
            raise EngineError(f"labels reference unknown record ids: {unknown[:5]}")
        self.labels.update(new_labels)


def initial_search(
    catalog: QuantizedCatalog,
    tree: KdTree,
    query_embedding: np.ndarray,
    head: head_mod.HeadParams,
    quantizer: quant_mod.Quantizer,
    k: int = DEFAULT_K,
    max_leaves: int | None = DEFAULT_KNN_LEAF_BUDGET,
) -> list[tuple[CatalogRecord, float]]:
    """Raw embedding -> head -> encode -> approximate kNN -> up to k records."""
    if k < 1:
        raise EngineError("k must be >= 1")
    q = np.asarray(query_embedding, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != head.dims[0]:
        raise EngineError(f"query embedding must have {head.dims[0]} dimensions")
    projected = head_mod.forward(head, q)
    code = quant_mod.encode(quantizer, projected)
    hits = knn(tree, code, k, max_leaves=max_leaves)
    return [(catalog.records[row], dist) for row, dist in hits]


def sample_negatives(
    catalog: QuantizedCatalog,
    exclude: set[int],
    count: int,
    seed: int,
) -> np.ndarray:
    """Uniform sample (without replacement) of row indices outside ``exclude``.

    Requests larger than the eligible pool are clamped, not an error.
    """
    eligible = np.setdiff1d(np.arange(catalog.n, dtype=np.int64), np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
    take = min(count, eligible.size)
    if take == 0:
        return np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(eligible, size=take, replace=False))


def finetune(session: Session, params: FinetuneParams) -> tuple[list[tuple[CatalogRecord, float]], SearchStats]:
    """One refinement round; deterministic for fixed session state and seed."""
    dataset = session.dataset
    catalog = dataset.catalog
    row_of_id = catalog.row_of_id()

    pos_rows = np.array(
        [row_of_id[i] for i, positive in sorted(session.labels.items()) if positive],
        dtype=np.int64,
    )
    neg_rows = np.array(
        [row_of_id[i] for i, positive in sorted(session.labels.items()) if not positive],
        dtype=np.int64,
    )
    if pos_rows.size == 0 or neg_rows.size == 0:
        raise EngineError("label at least one positive and one negative before fine-tuning")

    labeled = set(pos_rows.tolist()) | set(neg_rows.tolist())
    sampled = sample_negatives(catalog, labeled, params.negative_samples, params.seed)
    clamped = sampled.size < params.negative_samples

    rows = np.concatenate([pos_rows, neg_rows, sampled])
    labels = np.concatenate(
        [
            np.ones(pos_rows.size, dtype=bool),
            np.zeros(neg_rows.size + sampled.size, dtype=bool),
        ]
    )
    weights = np.concatenate(
        [
            np.ones(pos_rows.size),
            np.full(neg_rows.size, params.negative_weight),
            np.ones(sampled.size),
        ]
    )
    data = LabeledSet(codes=catalog.codes[rows], labels=labels, weights=weights)

    t0 = time.perf_counter()
    model = models.train(data, params.model_kind, seed=params.seed, hyper=params.hyper)
    train_ms = (time.perf_counter() - t0) * 1000.0

    timing: dict = {}
    if model.supports_boxes:
        positives = models.search_positives(model, dataset.tree, catalog, timing=timing)
    else:
        positives = models.scan_positives(model, catalog, timing=timing)

    results = [
        (catalog.records[row], score) for row, score in positives if row not in labeled
    ][: params.max_results]

    session.last_model = model
    session.iteration += 1
    stats = SearchStats(
        train_ms=train_ms,
        query_ms=timing["elapsed_ms"],
        n_candidates=timing["n_candidates"],
        n_positives=len(positives),
        model_kind=params.model_kind,
        iteration=session.iteration,
        n_negatives_sampled=int(sampled.size),
        negatives_clamped=clamped,
    )
    return results, stats
