"""Batch image extraction into the search engine's ingest format:
a row-major little-endian f32 file plus an aligned JSONL metadata file."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".gif", ".bmp", ".webp"}


def extract_images(
    image_dir: str | Path,
    out_f32: str | Path,
    out_meta_jsonl: str | Path,
    encoder,
) -> int:
    """Embed every readable image under ``image_dir`` (sorted, recursive).

    Writes one f32 row and one metadata line per image, in the same order.
    Unreadable files are skipped with a warning. Returns the row count.
    """
    image_dir = Path(image_dir)
    paths = sorted(
        p for p in image_dir.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )

    rows = []
    records = []
    for path in paths:
        try:
            with Image.open(path) as img:
                vector = encoder.embed_image(img)
        except (OSError, UnidentifiedImageError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        records.append({"id": len(rows), "uri": str(path.resolve()), "label": None})
        rows.append(vector)

    matrix = (
        np.stack(rows).astype("<f4") if rows else np.zeros((0, 512), dtype="<f4")
    )
    matrix.tofile(out_f32)
    with open(out_meta_jsonl, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    log.info("extracted %d images -> %s / %s", len(rows), out_f32, out_meta_jsonl)
    return len(rows)
