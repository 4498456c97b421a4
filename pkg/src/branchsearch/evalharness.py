"""Evaluation procedures at desk scale.

Three suites, each with a brute-force definition so results are unambiguous:

* ``recall_at_k`` -- neighbourhood preservation through quantization: overlap
  between the k nearest neighbours in a reference float space and in the
  decoded quantized space.
* the NN-classification baseline and the crossover experiment -- how many
  positive training examples a tree model needs before its F1 beats a
  nearest-neighbour oracle that is told the true positive count.
* ``zero_shot_accuracy`` -- nearest class embedding by cosine similarity on
  decoded vectors.

The full-scale numbers from real image corpora require externally supplied
embedding files (the ingest format accepts them); everything here runs on
synthetic data by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .catalog import QuantizedCatalog
from .models import LabeledSet, TreeHyper
from .quantizer import Quantizer


def _topk_rows(dists: np.ndarray, k: int, exclude: int | None = None) -> np.ndarray:
    """Indices of the k smallest distances, ties broken by lower index."""
    d = dists.astype(np.float64, copy=True)
    if exclude is not None:
        d[exclude] = np.inf
    order = np.lexsort((np.arange(d.shape[0]), d))
    return order[:k]


def recall_at_k(
    reference: np.ndarray,
    candidate: QuantizedCatalog,
    queries: list[int] | np.ndarray,
    k: int,
) -> float:
    """Mean overlap |topk_ref & topk_quantized| / k over the query rows.

    Both top-k sets are brute force (self excluded): Euclidean on the
    reference float vectors vs Euclidean on the decoded candidate codes.
    """
    ref = np.asarray(reference, dtype=np.float64)
    n = ref.shape[0]
    if candidate.n != n:
        raise ValueError("reference and candidate must hold the same rows")
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n")
    dec = Quantizer(candidate.params).decode(candidate.codes)

    total = 0.0
    for q in np.asarray(queries, dtype=np.int64):
        ref_d = np.linalg.norm(ref - ref[q], axis=1)
        cand_d = np.linalg.norm(dec - dec[q], axis=1)
        top_ref = set(_topk_rows(ref_d, k, exclude=int(q)).tolist())
        top_cand = set(_topk_rows(cand_d, k, exclude=int(q)).tolist())
        total += len(top_ref & top_cand) / k
    return total / len(list(queries))


def f1_score(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Binary F1 from boolean masks; 0.0 when there are no true or predicted positives."""
    tp = np.count_nonzero(predicted & truth)
    if tp == 0:
        return 0.0
    precision = tp / np.count_nonzero(predicted)
    recall = tp / np.count_nonzero(truth)
    return 2 * precision * recall / (precision + recall)


def nn_baseline_f1(
    train_positives: np.ndarray,
    test_codes: np.ndarray,
    test_labels: np.ndarray,
    target_class: int,
) -> float:
    """F1 of the nearest-neighbour classification baseline.

    Every test row among the k nearest neighbours of any training positive is
    predicted positive, with k set to the true positive count in the test set
    (an oracle advantage the baseline gets for free).
    """
    train = np.atleast_2d(np.asarray(train_positives)).astype(np.int64)
    codes = np.asarray(test_codes).astype(np.int64)
    truth = np.asarray(test_labels) == target_class
    k = int(np.count_nonzero(truth))
    if k == 0:
        raise ValueError(f"class {target_class} absent from the test set")
    if train.shape[0] == 0:
        raise ValueError("need at least one training positive")

    predicted = np.zeros(codes.shape[0], dtype=bool)
    for tp in train:
        dists = np.linalg.norm(codes - tp, axis=1)
        predicted[_topk_rows(dists, k)] = True
    return f1_score(predicted, truth)


@dataclass
class CrossoverResult:
    """Per-positive-count mean F1 curves and the first count where the model wins."""

    model_kind: str
    positives: list[int]
    model_f1: list[float]
    baseline_f1: list[float]
    crossover_point: int | None

    def rows(self) -> list[tuple[int, float, float]]:
        return list(zip(self.positives, self.model_f1, self.baseline_f1))


def crossover_experiment(
    codes: np.ndarray,
    labels: np.ndarray,
    model_kind: str,
    seeds: list[int] | np.ndarray,
    max_positives: int = 30,
    negative_samples: int = 150,
    hyper: TreeHyper | None = None,
) -> CrossoverResult:
    """How many labeled positives the model needs to beat the NN baseline.

    For each positive count p = 1, 2, ... the model trains on p sampled
    positives of a seed-chosen target class plus randomly sampled negatives
    (accepting the label noise of an occasional true positive among them),
    then both the model and the baseline are scored by F1 on the held-out
    rows. Curves are averaged over seeds; the crossover point is the
    smallest p whose mean model F1 strictly exceeds the baseline's.
    """
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    hyper = hyper or TreeHyper()
    n = codes.shape[0]

    model_curve = np.zeros(max_positives)
    base_curve = np.zeros(max_positives)
    for si, seed in enumerate(seeds):
        target = int(classes[si % len(classes)])
        class_rows = np.nonzero(labels == target)[0]
        if class_rows.size < max_positives:
            raise ValueError(f"class {target} has fewer than {max_positives} rows")
        for p in range(1, max_positives + 1):
            rng = np.random.default_rng([int(seed), p])
            pos_rows = rng.choice(class_rows, size=p, replace=False)
            pool = np.setdiff1d(np.arange(n), pos_rows)
            neg_rows = rng.choice(pool, size=min(negative_samples, pool.size), replace=False)

            train_rows = np.concatenate([pos_rows, neg_rows])
            y = np.concatenate([np.ones(p, dtype=bool), np.zeros(neg_rows.size, dtype=bool)])
            data = LabeledSet(codes=codes[train_rows], labels=y, weights=np.ones(train_rows.size))
            model = models.train(data, model_kind, seed=int(seed), hyper=hyper)

            test_rows = np.setdiff1d(np.arange(n), train_rows)
            test_codes = codes[test_rows]
            truth_labels = labels[test_rows]
            pred, _ = models.predict_batch(model, test_codes)
            model_curve[p - 1] += f1_score(pred, truth_labels == target)
            base_curve[p - 1] += nn_baseline_f1(codes[pos_rows], test_codes, truth_labels, target)

    model_curve /= len(list(seeds))
    base_curve /= len(list(seeds))
    crossover = None
    for p in range(max_positives):
        if model_curve[p] > base_curve[p]:
            crossover = p + 1
            break
    return CrossoverResult(
        model_kind=model_kind,
        positives=list(range(1, max_positives + 1)),
        model_f1=model_curve.tolist(),
        baseline_f1=base_curve.tolist(),
        crossover_point=crossover,
    )


def quantization_benchmark(
    n_pairs: int = 1500,
    n_classes: int = 10,
    item_noise: float = 0.02,
    view_noise: float = 0.005,
    catalog_noise: float = 1e-4,
    seed: int = 0,
    epochs: int = 40,
    koleo_weight: float = 0.1,
    batch_size: int = 128,
    learning_rate: float = 0.1,
    n_queries: int = 100,
    ks: tuple[int, ...] = (1, 10, 100),
) -> list[tuple[str, dict[int, float], float]]:
    """Recall@k + zero-shot accuracy for three head pipelines on synthetic pairs.

    Compares an untrained (random) head, an alignment-trained head, and an
    alignment + uniformity-regularized head. Each pipeline projects the same
    catalog, fits its own quantizer, and is scored on how well quantization
    preserves its own float-space neighbourhoods, plus nearest-class-prototype
    accuracy. Returns [(name, {k: recall}, accuracy)] in the order
    random_head, head, head_koleo.

    The catalog's within-class neighbour distances are deliberately close to
    the quantization step of an untrained projection, so heads that spread
    the local geometry measurably improve recall.
    """
    from . import head as head_mod
    from . import quantizer as quant_mod
    from . import synthetic
    from .catalog import CatalogRecord

    rng = np.random.default_rng(seed)
    protos = synthetic.unit_rows(rng.normal(size=(n_classes, 512)))

    # training pairs: item offsets large enough for alignment to latch onto
    cls_train = rng.integers(0, n_classes, size=n_pairs)
    items = synthetic.unit_rows(protos[cls_train] + item_noise * rng.normal(size=(n_pairs, 512)))
    xa = synthetic.unit_rows(items + view_noise * rng.normal(size=(n_pairs, 512))).astype(np.float32)
    xb = synthetic.unit_rows(items + view_noise * rng.normal(size=(n_pairs, 512))).astype(np.float32)

    # catalog: much finer within-class structure around the same prototypes,
    # deliberately at the scale where quantization starts to scramble it
    cat_labels = rng.integers(0, n_classes, size=n_pairs)
    centers = synthetic.unit_rows(
        protos[cat_labels] + catalog_noise * rng.normal(size=(n_pairs, 512))
    )
    queries = rng.choice(n_pairs, size=min(n_queries, n_pairs), replace=False)

    def base_cfg(weight):
        return head_mod.TrainConfig(
            koleo_weight=weight,
            epochs=epochs,
            seed=seed,
            batch_size=batch_size,
            learning_rate=learning_rate,
        )

    heads = [
        ("random_head", head_mod.init_params(seed)),
        ("head", head_mod.train_head((xa, xb), base_cfg(0.0))),
        ("head_koleo", head_mod.train_head((xa, xb), base_cfg(koleo_weight))),
    ]

    # class prototypes for the zero-shot column: per-class mean item center
    protos = np.stack(
        [synthetic.unit_rows(centers[cat_labels == c].mean(axis=0, keepdims=True))[0]
         for c in range(n_classes)]
    )

    table = []
    for name, params in heads:
        projected = head_mod.forward(params, centers.astype(np.float64)).astype(np.float32)
        q = quant_mod.fit(projected)
        codes = quant_mod.encode(q, projected)
        catalog = QuantizedCatalog(
            params=q.params,
            codes=codes,
            records=[
                CatalogRecord(id=i, uri=f"synthetic://item/{i}", label=int(cat_labels[i]))
                for i in range(n_pairs)
            ],
        )
        recalls = {k: recall_at_k(projected, catalog, queries, k) for k in ks}
        class_codes = {
            c: quant_mod.encode(q, head_mod.forward(params, protos[c].astype(np.float64)))
            for c in range(n_classes)
        }
        acc = zero_shot_accuracy(catalog, class_codes)
        table.append((name, recalls, acc))
    return table


def zero_shot_accuracy(
    catalog: QuantizedCatalog,
    class_embeddings: dict[int, np.ndarray],
) -> float:
    """Fraction of rows whose nearest class embedding (cosine, on decoded
    vectors) matches the true label; ties go to the lowest class id."""
    labels = np.array([r.label for r in catalog.records])
    if any(l is None for l in labels.tolist()):
        raise ValueError("zero-shot accuracy needs a labeled catalog")
    missing = sorted(set(labels.tolist()) - set(class_embeddings))
    if missing:
        raise ValueError(f"no class embedding for labels {missing}")

    q = Quantizer(catalog.params)
    vectors = q.decode(catalog.codes)
    class_ids = sorted(class_embeddings)
    protos = q.decode(np.asarray([class_embeddings[c] for c in class_ids], dtype=np.uint8))

    def normed(x):
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return x / norms

    sims = normed(vectors) @ normed(protos).T
    best = np.argmax(sims, axis=1)  # first max -> lowest class id
    predicted = np.asarray(class_ids)[best]
    return float(np.mean(predicted == labels))
