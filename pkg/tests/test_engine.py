import numpy as np
import pytest

from branchsearch import engine, head as head_mod, models, quantizer
from branchsearch.engine import (
    Dataset,
    EngineError,
    FinetuneParams,
    Session,
    finetune,
    initial_search,
    sample_negatives,
)
from branchsearch.index import build
from branchsearch.synthetic import catalog_from_codes, clustered_codes, unit_rows


@pytest.fixture(scope="module")
def toy_dataset():
    """Small end-to-end dataset: raw 512-d vectors -> head -> codes -> tree."""
    rng = np.random.default_rng(0)
    protos = unit_rows(rng.normal(size=(6, 512)))
    labels = rng.integers(0, 6, size=400)
    raw = unit_rows(protos[labels] + 0.05 * rng.normal(size=(400, 512))).astype(np.float32)

    head = head_mod.init_params(1)
    projected = head_mod.forward(head, raw.astype(np.float64)).astype(np.float32)
    q = quantizer.fit(projected)
    catalog = catalog_from_codes(q.encode(projected), labels)
    tree = build(catalog, leaf_size=16)
    ds = Dataset(name="toy", catalog=catalog, tree=tree, head=head, quantizer=q)
    return ds, raw, labels


class TestInitialSearch:
    def test_catalog_item_embedding_ranks_first(self, toy_dataset):
        ds, raw, _ = toy_dataset
        hits = initial_search(ds.catalog, ds.tree, raw[42], ds.head, ds.quantizer, k=5)
        assert hits[0][0].id == 42
        assert hits[0][1] == 0.0

    def test_k_clamped_to_catalog_size(self, toy_dataset):
        ds, raw, _ = toy_dataset
        hits = initial_search(ds.catalog, ds.tree, raw[0], ds.head, ds.quantizer, k=1000)
        assert len(hits) == 400

    def test_approximate_results_within_generous_exact_set(self, toy_dataset):
        ds, raw, _ = toy_dataset
        from branchsearch.index import knn

        query = raw[7]
        projected = head_mod.forward(ds.head, query.astype(np.float64))
        code = ds.quantizer.encode(projected)
        exact_5k = {row for row, _ in knn(ds.tree, code, 50)}
        approx = initial_search(ds.catalog, ds.tree, query, ds.head, ds.quantizer, k=10)
        assert {rec.id for rec, _ in approx} <= exact_5k

    def test_dimension_mismatch_rejected(self, toy_dataset):
        ds, _, _ = toy_dataset
        with pytest.raises(EngineError, match="512"):
            initial_search(ds.catalog, ds.tree, np.zeros(100), ds.head, ds.quantizer)


class TestSampleNegatives:
    def test_count_zero_empty(self, toy_dataset):
        ds, _, _ = toy_dataset
        assert sample_negatives(ds.catalog, set(), 0, seed=0).size == 0

    def test_exclude_all_clamps_to_empty(self, toy_dataset):
        ds, _, _ = toy_dataset
        out = sample_negatives(ds.catalog, set(range(400)), 10, seed=0)
        assert out.size == 0

    def test_deterministic_under_seed(self, toy_dataset):
        ds, _, _ = toy_dataset
        a = sample_negatives(ds.catalog, {1, 2, 3}, 50, seed=9)
        b = sample_negatives(ds.catalog, {1, 2, 3}, 50, seed=9)
        assert np.array_equal(a, b)

    def test_never_returns_excluded(self, toy_dataset):
        ds, _, _ = toy_dataset
        exclude = set(range(0, 400, 3))
        out = sample_negatives(ds.catalog, exclude, 100, seed=4)
        assert not (set(out.tolist()) & exclude)

    def test_uniform_frequencies_over_many_seeds(self):
        codes, _ = clustered_codes(40, seed=1)
        catalog = catalog_from_codes(codes)
        exclude = {0, 1, 2, 3}
        counts = np.zeros(40)
        n_seeds, take = 4000, 6
        for seed in range(n_seeds):
            counts[sample_negatives(catalog, exclude, take, seed=seed)] += 1
        eligible = 36
        p = take / eligible
        expected = n_seeds * p
        sigma = np.sqrt(n_seeds * p * (1 - p))
        assert np.all(counts[4:] > expected - 4 * sigma)
        assert np.all(counts[4:] < expected + 4 * sigma)
        assert counts[:4].sum() == 0


def make_session(ds, labels_map):
    session = Session(dataset=ds)
    session.apply_labels(labels_map)
    return session


class TestFinetune:
    def test_requires_both_classes(self, toy_dataset):
        ds, _, _ = toy_dataset
        session = make_session(ds, {0: True, 1: True})
        with pytest.raises(EngineError, match="positive and one negative"):
            finetune(session, FinetuneParams(seed=0))

    def test_unknown_ids_rejected(self, toy_dataset):
        ds, _, _ = toy_dataset
        session = Session(dataset=ds)
        with pytest.raises(EngineError, match="unknown record ids"):
            session.apply_labels({99999: True})

    def test_separable_cluster_high_recall(self):
        from branchsearch.models import TreeHyper

        codes, labels = clustered_codes(3000, n_classes=20, spread=8.0, seed=3)
        catalog = catalog_from_codes(codes, labels)
        tree = build(catalog, leaf_size=16)
        ds = Dataset("c", catalog, tree, head_mod.init_params(0), quantizer.Quantizer(catalog.params))

        target_rows = np.nonzero(labels == 2)[0]
        rng = np.random.default_rng(5)
        pos = rng.choice(target_rows, 25, replace=False)
        neg = rng.choice(np.nonzero(labels != 2)[0], 25, replace=False)
        session = make_session(
            ds, {**{int(r): True for r in pos}, **{int(r): False for r in neg}}
        )
        results, stats = finetune(
            session,
            FinetuneParams(
                model_kind="dbranch_ensemble",
                negative_samples=150,
                seed=0,
                max_results=3000,
                hyper=TreeHyper(max_depth=24),
            ),
        )
        returned = {rec.id for rec, _ in results}
        unlabeled_cluster = set(target_rows.tolist()) - {int(r) for r in pos}
        recall = len(returned & unlabeled_cluster) / len(unlabeled_cluster)
        assert recall >= 0.9
        assert stats.n_positives >= len(returned)

    def test_huge_negative_weight_excludes_user_negatives(self):
        codes, labels = clustered_codes(2000, n_classes=4, spread=14.0, seed=6)
        catalog = catalog_from_codes(codes, labels)
        tree = build(catalog, leaf_size=16)
        ds = Dataset("c", catalog, tree, head_mod.init_params(0), quantizer.Quantizer(catalog.params))
        rng = np.random.default_rng(7)
        pos = rng.choice(np.nonzero(labels == 0)[0], 20, replace=False)
        # adversarial: mark some points of the same cluster negative
        neg = rng.choice(np.setdiff1d(np.nonzero(labels == 0)[0], pos), 10, replace=False)
        session = make_session(
            ds, {**{int(r): True for r in pos}, **{int(r): False for r in neg}}
        )
        _, _ = finetune(
            session,
            FinetuneParams(model_kind="dbranch", negative_weight=1e6, negative_samples=200, seed=0),
        )
        for row in neg:
            label, _ = models.predict_point(session.last_model, catalog.codes[row])
            assert label is False

    def test_labeled_rows_never_in_results(self, toy_dataset):
        ds, _, _ = toy_dataset
        labels_map = {i: i % 2 == 0 for i in range(20)}
        session = make_session(ds, labels_map)
        results, _ = finetune(session, FinetuneParams(negative_samples=50, seed=1))
        returned = {rec.id for rec, _ in results}
        assert not (returned & set(labels_map))

    def test_deterministic_same_state_same_seed(self, toy_dataset):
        ds, _, _ = toy_dataset
        labels_map = {i: i < 10 for i in range(20)}
        out1 = finetune(make_session(ds, labels_map), FinetuneParams(seed=3, negative_samples=60))
        out2 = finetune(make_session(ds, labels_map), FinetuneParams(seed=3, negative_samples=60))
        assert [(r.id, s) for r, s in out1[0]] == [(r.id, s) for r, s in out2[0]]

    def test_iteration_increments_and_labels_accumulate(self, toy_dataset):
        ds, _, _ = toy_dataset
        session = make_session(ds, {0: True, 1: False, 5: False})
        _, stats1 = finetune(session, FinetuneParams(seed=0, negative_samples=30))
        assert stats1.iteration == 1
        session.apply_labels({2: True, 1: True})  # relabel: newest wins
        _, stats2 = finetune(session, FinetuneParams(seed=0, negative_samples=30))
        assert stats2.iteration == 2
        assert session.labels[1] is True

    def test_stats_consistency(self, toy_dataset):
        ds, _, _ = toy_dataset
        session = make_session(ds, {i: i < 5 for i in range(10)})
        results, stats = finetune(session, FinetuneParams(seed=2, negative_samples=100))
        assert stats.n_positives <= stats.n_candidates <= ds.catalog.n
        assert stats.train_ms > 0 and stats.query_ms > 0
        assert stats.n_negatives_sampled == 100

    def test_scan_only_kind_routed(self, toy_dataset):
        ds, _, _ = toy_dataset
        session = make_session(ds, {i: i < 5 for i in range(10)})
        results, stats = finetune(session, FinetuneParams(model_kind="rforest", seed=2))
        assert stats.n_candidates == ds.catalog.n  # full scan visits everything

    def test_max_results_truncation(self, toy_dataset):
        ds, _, _ = toy_dataset
        session = make_session(ds, {i: i < 10 for i in range(12)})
        results, stats = finetune(
            session, FinetuneParams(seed=4, negative_samples=20, max_results=3)
        )
        assert len(results) <= 3


class TestIterativeImprovement:
    def test_correcting_errors_improves_mean_f1(self):
        """Labeling iteration-1 mistakes with their true labels should not
        hurt F1 on average (averaged over seeds)."""
        codes, labels = clustered_codes(2500, n_classes=5, spread=16.0, seed=8)
        catalog = catalog_from_codes(codes, labels)
        tree = build(catalog, leaf_size=16)
        ds = Dataset("c", catalog, tree, head_mod.init_params(0), quantizer.Quantizer(catalog.params))
        target = 1
        truth = set(np.nonzero(labels == target)[0].tolist())

        def run(seed):
            rng = np.random.default_rng(seed)
            pos = rng.choice(sorted(truth), 8, replace=False)
            neg = rng.choice(np.nonzero(labels != target)[0], 8, replace=False)
            session = make_session(
                ds, {**{int(r): True for r in pos}, **{int(r): False for r in neg}}
            )
            params = FinetuneParams(negative_samples=150, seed=seed, max_results=2500)

            def f1_of(results):
                session_labeled = {i for i, _ in session.labels.items()}
                predicted = {rec.id for rec, _ in results} | {
                    i for i, v in session.labels.items() if v
                }
                tp = len(predicted & truth)
                if tp == 0:
                    return 0.0
                p = tp / len(predicted)
                r = tp / len(truth)
                return 2 * p * r / (p + r)

            results1, _ = finetune(session, params)
            f1_one = f1_of(results1)

            # correct up to 10 mistakes of iteration 1: false positives among
            # the returned results, and missed cluster members
            returned = [rec.id for rec, _ in results1]
            fixes = {}
            for rid in returned:
                if len(fixes) >= 5:
                    break
                if rid not in truth:
                    fixes[rid] = False
            missed = truth - {rec.id for rec, _ in results1} - set(session.labels)
            for rid in sorted(missed)[:5]:
                fixes[rid] = True
            if fixes:
                session.apply_labels(fixes)
            results2, _ = finetune(session, params)
            return f1_one, f1_of(results2)

        outcomes = [run(seed) for seed in range(20)]
        mean1 = np.mean([a for a, _ in outcomes])
        mean2 = np.mean([b for _, b in outcomes])
        assert mean2 >= mean1
