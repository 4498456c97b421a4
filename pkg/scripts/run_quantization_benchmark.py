#!/usr/bin/env python3
"""Recall-under-quantization comparison of the three head pipelines.

Prints the per-seed and mean recall@{1,10,100} + zero-shot accuracy table
for an untrained head, an alignment-trained head, and alignment + the
uniformity regularizer.

    python scripts/run_quantization_benchmark.py --seeds 5
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from branchsearch.evalharness import quantization_benchmark


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n-pairs", type=int, default=1500)
    ap.add_argument("--epochs", type=int, default=40)
    args = ap.parse_args()

    acc = {}
    for seed in range(args.seeds):
        table = quantization_benchmark(n_pairs=args.n_pairs, epochs=args.epochs, seed=seed)
        print(f"seed {seed}:")
        for name, recalls, zs in table:
            print(
                f"  {name:<14} R@1={recalls[1]:.3f} R@10={recalls[10]:.3f} "
                f"R@100={recalls[100]:.3f} acc={zs:.3f}"
            )
            acc.setdefault(name, []).append([recalls[1], recalls[10], recalls[100], zs])

    print("\nmeans:")
    print(f"{'pipeline':<16} {'R@1':>6} {'R@10':>6} {'R@100':>6} {'acc':>6}")
    for name, rows in acc.items():
        m = np.mean(rows, axis=0)
        print(f"{name:<16} {m[0]:>6.3f} {m[1]:>6.3f} {m[2]:>6.3f} {m[3]:>6.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
