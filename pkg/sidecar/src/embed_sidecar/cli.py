"""Sidecar command line: extract-images and serve."""

from __future__ import annotations

import argparse
import logging
import sys

from .extract import extract_images
from .features import make_encoder


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="embed-sidecar")
    parser.add_argument("--backend", choices=("hash", "clip"), default="hash")
    parser.add_argument("--clip-model", default=None, help="model id/path for the clip backend")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-images", help="image dir -> f32 rows + JSONL metadata")
    p.add_argument("--images", required=True)
    p.add_argument("--out-f32", required=True)
    p.add_argument("--out-meta", required=True)

    p = sub.add_parser("serve", help="run the /embed_text HTTP endpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9090)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        encoder = make_encoder(args.backend, args.clip_model)
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.command == "extract-images":
        count = extract_images(args.images, args.out_f32, args.out_meta, encoder)
        print(f"extracted {count} images ({encoder.name} backend)")
        return 0

    import uvicorn

    from .server import create_app

    uvicorn.run(create_app(encoder), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
