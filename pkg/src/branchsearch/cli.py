"""Operator command line: ingest, train-head, build-index, serve, eval.

Each subcommand drives one module's public operations and is deterministic
given its seeds. Errors exit non-zero with a message on stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import evalharness, head as head_mod, index as index_mod, models, quantizer as quant_mod, synthetic
from .catalog import (
    CatalogRecord,
    QuantizedCatalog,
    meta_path_for,
    read_catalog,
    write_catalog,
)
from .config import load_config, load_datasets


def _read_embedding_file(path: Path, d_in: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % d_in != 0:
        raise SystemExit(
            f"{path}: {raw.size} floats is not a multiple of d_in={d_in}"
        )
    return raw.reshape(-1, d_in)


def _read_meta_records(path: Path) -> list[CatalogRecord]:
    import json

    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                CatalogRecord(id=int(obj["id"]), uri=obj["uri"], label=obj.get("label"))
            )
    return records


def cmd_ingest(args) -> int:
    head = head_mod.read_head(Path(args.head))
    d_in = head.dims[0]
    embeddings = _read_embedding_file(Path(args.embeddings), d_in)
    records = _read_meta_records(Path(args.meta))
    if len(records) != embeddings.shape[0]:
        raise SystemExit(
            f"{args.meta}: {len(records)} metadata records for {embeddings.shape[0]} embedding rows"
        )

    chunks = []
    for lo in range(0, embeddings.shape[0], args.chunk_size):
        chunks.append(head_mod.forward(head, embeddings[lo : lo + args.chunk_size].astype(np.float64)))
    projected = (
        np.concatenate(chunks).astype(np.float32)
        if chunks
        else np.zeros((0, head.dims[2]), np.float32)
    )

    q = quant_mod.fit(projected)
    codes = quant_mod.encode(q, projected)
    catalog = QuantizedCatalog(params=q.params, codes=codes, records=records)
    write_catalog(catalog, args.out)
    print(
        f"ingested {catalog.n} rows: {d_in}-d float -> {catalog.dim}-d u8 "
        f"(storage factor {args_storage_factor(d_in, catalog.dim):g}) -> {args.out}"
    )
    return 0


def args_storage_factor(d_in: int, d_out: int) -> float:
    from .catalog import storage_reduction_factor

    return storage_reduction_factor(d_in, d_out)


def cmd_train_head(args) -> int:
    pairs = _read_embedding_file(Path(args.pairs), args.d_in)
    if pairs.shape[0] % 2 != 0:
        raise SystemExit(f"{args.pairs}: interleaved pair file must have an even row count")
    xa, xb = pairs[0::2], pairs[1::2]
    cfg = head_mod.TrainConfig(
        koleo_weight=args.koleo_weight,
        temperature=args.temperature,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    log = head_mod.TrainLog()
    params = head_mod.train_head((xa, xb), cfg, log=log, dims=(args.d_in, args.hidden, args.d_out))
    head_mod.write_head(params, args.out)
    if log.total:
        print(f"trained {args.epochs} epochs; final loss {log.total[-1]:.4f} "
              f"(align {log.align[-1]:.4f}, koleo {log.koleo[-1]:.4f}) -> {args.out}")
    else:
        print(f"wrote untrained (0 epochs) head -> {args.out}")
    return 0


def cmd_build_index(args) -> int:
    catalog = read_catalog(args.catalog)
    tree = index_mod.build(catalog, leaf_size=args.leaf_size)
    index_mod.write_tree(tree, args.out)
    print(f"built k-d tree over {catalog.n} rows ({tree.n_nodes} nodes, leaf_size {args.leaf_size}) -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    cfg = load_config(args.config)
    datasets = load_datasets(cfg)
    app = create_app(datasets, cfg)
    print(f"serving {len(datasets)} dataset(s) on {cfg.host}:{cfg.port}")
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
    return 0


def _write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _eval_recall(args) -> int:
    """Table-1-style comparison: recall@{1,10,100} + zero-shot accuracy for
    an untrained head, an aligned head, and an aligned head with the
    uniformity regularizer, on the synthetic paired benchmark."""
    table = evalharness.quantization_benchmark(
        n_pairs=args.n_items,
        n_classes=args.n_classes,
        seed=args.seed,
        epochs=args.epochs,
    )
    rows = [
        (name, f"{r[1]:.3f}", f"{r[10]:.3f}", f"{r[100]:.3f}", f"{acc:.3f}")
        for name, r, acc in table
    ]
    _write_csv(Path(args.out_csv), ["pipeline", "recall@1", "recall@10", "recall@100", "zero_shot_accuracy"], rows)
    print(f"{'pipeline':<16} {'R@1':>6} {'R@10':>6} {'R@100':>6} {'acc':>6}")
    for name, r, acc in table:
        print(f"{name:<16} {r[1]:>6.3f} {r[10]:>6.3f} {r[100]:>6.3f} {acc:>6.3f}")
    print(f"wrote {args.out_csv}")
    return 0


def _load_labeled_codes(args) -> tuple[np.ndarray, np.ndarray]:
    if args.catalog:
        catalog = read_catalog(args.catalog)
        labels = np.array([r.label for r in catalog.records])
        if any(l is None for l in labels.tolist()):
            raise SystemExit(f"{args.catalog}: records need integer labels for this suite")
        return catalog.codes, labels.astype(np.int64)
    return synthetic.clustered_codes(
        args.n_items, n_classes=args.n_classes, spread=args.spread, seed=args.seed
    )


def _eval_crossover(args) -> int:
    codes, labels = _load_labeled_codes(args)
    seeds = list(range(args.seed, args.seed + args.n_seeds))
    rows = []
    summary = []
    for kind in ("dbranch", "dbranch_ensemble"):
        result = evalharness.crossover_experiment(
            codes, labels, kind, seeds, max_positives=args.max_positives
        )
        rows += [(kind, p, f"{m:.4f}", f"{b:.4f}") for p, m, b in result.rows()]
        summary.append((kind, result.crossover_point))
    _write_csv(Path(args.out_csv), ["model_kind", "n_positives", "model_f1", "nn_baseline_f1"], rows)
    for kind, point in summary:
        print(f"{kind}: crossover at {point} positives" if point else f"{kind}: no crossover found")
    print(f"wrote {args.out_csv}")
    return 0


def _eval_zeroshot(args) -> int:
    codes, labels = _load_labeled_codes(args)
    catalog = synthetic.catalog_from_codes(codes, labels)
    # class embeddings at the per-class code centroids
    class_embeddings = {
        int(c): np.round(codes[labels == c].mean(axis=0)).astype(np.uint8)
        for c in np.unique(labels)
    }
    acc = evalharness.zero_shot_accuracy(catalog, class_embeddings)
    _write_csv(Path(args.out_csv), ["n_items", "n_classes", "accuracy"], [
        (codes.shape[0], len(class_embeddings), f"{acc:.4f}")
    ])
    print(f"zero-shot accuracy {acc:.4f} over {codes.shape[0]} rows, {len(class_embeddings)} classes")
    print(f"wrote {args.out_csv}")
    return 0


def cmd_eval(args) -> int:
    if args.suite == "recall":
        return _eval_recall(args)
    if args.suite == "crossover":
        return _eval_crossover(args)
    return _eval_zeroshot(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="branchsearch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="embeddings + metadata + head -> quantized catalog")
    p.add_argument("--embeddings", required=True, help="raw little-endian f32 file, row-major")
    p.add_argument("--meta", required=True, help="JSONL metadata, one record per row")
    p.add_argument("--head", required=True, help="trained head parameters (CBHD)")
    p.add_argument("--out", required=True, help="output catalog path (CBRX)")
    p.add_argument("--chunk-size", type=int, default=8192)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-head", help="train the projection head on paired views")
    p.add_argument("--pairs", required=True,
                   help="f32 file of interleaved pairs: row 2i = view A, row 2i+1 = view B")
    p.add_argument("--out", required=True)
    p.add_argument("--d-in", type=int, default=512)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--d-out", type=int, default=32)
    p.add_argument("--koleo-weight", type=float, default=0.1)
    p.add_argument("--temperature", type=float, default=0.07)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("build-index", help="build the k-d tree for a catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--leaf-size", type=int, default=index_mod.DEFAULT_LEAF_SIZE)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="run an evaluation suite (CSV + summary)")
    p.add_argument("--suite", choices=("recall", "crossover", "zeroshot"), required=True)
    p.add_argument("--out-csv", default="eval.csv")
    p.add_argument("--catalog", help="use a real labeled catalog instead of synthetic data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--n-items", type=int, default=2000)
    p.add_argument("--n-classes", type=int, default=10)
    p.add_argument("--spread", type=float, default=12.0)
    p.add_argument("--max-positives", type=int, default=30)
    p.add_argument("--epochs", type=int, default=25)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
