#!/usr/bin/env python3
"""Index-vs-scan timing on a large synthetic catalog.

Builds a clustered million-row catalog, trains a selective single decision
branch from 100 positives + sampled negatives, and times whole-catalog
retrieval through k-d tree range queries against the vectorized full scan.

    python scripts/benchmark_index_speedup.py --n 1000000
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from branchsearch import models, synthetic
from branchsearch.catalog import QuantizationParams, QuantizedCatalog
from branchsearch.index import build
from branchsearch.models import LabeledSet


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--n-classes", type=int, default=200)
    ap.add_argument("--n-negatives", type=int, default=5000)
    ap.add_argument("--leaf-size", type=int, default=64)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    codes, labels = synthetic.clustered_codes(
        args.n, n_classes=args.n_classes, spread=8.0, anisotropy=3.0, seed=args.seed
    )
    catalog = QuantizedCatalog.__new__(QuantizedCatalog)
    catalog.params = QuantizationParams(lo=np.zeros(32, np.float32), hi=np.ones(32, np.float32))
    catalog.codes = codes
    catalog.records = []

    t0 = time.perf_counter()
    tree = build(codes, leaf_size=args.leaf_size)
    tree.codes_ordered
    print(f"built index over {args.n} rows in {time.perf_counter() - t0:.1f}s ({tree.n_nodes} nodes)")

    rng = np.random.default_rng(1)
    pos = rng.choice(np.nonzero(labels == 0)[0], 100, replace=False)
    neg = rng.choice(np.setdiff1d(np.arange(args.n), pos), args.n_negatives, replace=False)
    rows = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(pos.size, bool), np.zeros(neg.size, bool)])
    data = LabeledSet(codes=codes[rows], labels=y, weights=np.ones(rows.size))

    for kind in ("dbranch", "dbranch_ensemble"):
        model = models.train(data, kind, seed=1)
        idx_ms, scan_ms = [], []
        for _ in range(args.reps):
            t = {}
            a = models.search_positives(model, tree, catalog, timing=t)
            idx_ms.append(t["elapsed_ms"])
            t2 = {}
            b = models.scan_positives(model, catalog, timing=t2)
            scan_ms.append(t2["elapsed_ms"])
        assert a == b, "index and scan disagree"
        idx, scan = np.median(idx_ms), np.median(scan_ms)
        print(
            f"{kind:<18} positives={len(a):>7} ({100 * len(a) / args.n:.2f}%)  "
            f"index={idx:8.1f}ms  scan={scan:8.1f}ms  speedup={scan / idx:.1f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
