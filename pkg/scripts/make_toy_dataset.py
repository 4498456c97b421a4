#!/usr/bin/env python3
"""Build a small servable demo dataset from scratch.

Generates synthetic 512-d embeddings (clustered on the unit sphere) plus
metadata and training pairs, then drives the full CLI pipeline:
train-head -> ingest -> build-index, and writes a ready server config.

    python scripts/make_toy_dataset.py --out demo/ --n-items 2000
    branchsearch serve --config demo/server.toml
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from branchsearch import cli
from branchsearch.synthetic import paired_views, unit_rows


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo")
    ap.add_argument("--n-items", type=int, default=2000)
    ap.add_argument("--n-classes", type=int, default=12)
    ap.add_argument("--n-pairs", type=int, default=1024)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--listen", default="127.0.0.1:8080")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    protos = unit_rows(rng.normal(size=(args.n_classes, 512)))
    labels = rng.integers(0, args.n_classes, size=args.n_items)
    raw = unit_rows(protos[labels] + 0.05 * rng.normal(size=(args.n_items, 512)))
    raw.astype("<f4").tofile(out / "toy.f32")
    with open(out / "toy.jsonl", "w") as fh:
        for i in range(args.n_items):
            fh.write(
                json.dumps(
                    {"id": i, "uri": f"https://picsum.photos/seed/{i}/256", "label": int(labels[i])}
                )
                + "\n"
            )

    xa, xb, _, _ = paired_views(args.n_pairs, n_classes=args.n_classes, seed=args.seed)
    pairs = np.empty((2 * args.n_pairs, 512), np.float32)
    pairs[0::2] = xa
    pairs[1::2] = xb
    pairs.astype("<f4").tofile(out / "pairs.f32")

    steps = [
        ["train-head", "--pairs", str(out / "pairs.f32"), "--out", str(out / "toy.cbhd"),
         "--epochs", str(args.epochs), "--seed", str(args.seed)],
        ["ingest", "--embeddings", str(out / "toy.f32"), "--meta", str(out / "toy.jsonl"),
         "--head", str(out / "toy.cbhd"), "--out", str(out / "toy.cbrx")],
        ["build-index", "--catalog", str(out / "toy.cbrx"), "--out", str(out / "toy.cbkd")],
    ]
    for step in steps:
        if cli.main(step) != 0:
            return 1

    (out / "server.toml").write_text(
        f'listen = "{args.listen}"\n'
        'cors_origins = ["*"]\n'
        "\n"
        "[defaults]\n"
        "k = 60\n"
        "negative_samples = 1000\n"
        "negative_weight = 10.0\n"
        "max_results = 500\n"
        "\n"
        "[datasets.toy]\n"
        'catalog = "toy.cbrx"\n'
        'index = "toy.cbkd"\n'
        'head = "toy.cbhd"\n'
    )
    print(f"demo dataset ready: branchsearch serve --config {out / 'server.toml'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
