"""Quantized embedding catalog: the on-disk store everything else is built from.

A catalog is a pair of files:

* a binary code file holding per-dimension quantization ranges and the
  ``n x d`` uint8 code matrix,
* a JSON-lines metadata sidecar with one record per row (id, uri, optional
  integer class label), in row order.

Binary layout (all little-endian)::

    magic "CBRX" | version u16 | d u16 | n u64 | levels u16 (=256)
    | lo[d] f32 | hi[d] f32 | codes n*d u8 (row-major)

The sidecar lives next to the code file as ``<path>.meta.jsonl`` unless an
explicit path is given. Catalogs are immutable after load; rebuilding and
atomically replacing the files is the only mutation story.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CBRX"
FORMAT_VERSION = 1
QUANT_LEVELS = 256

_HEADER = struct.Struct("<4sHHQH")  # magic, version, d, n, levels


class CatalogFormatError(ValueError):
    """Raised for malformed, truncated, or invariant-violating catalog files."""


def meta_path_for(path: str | os.PathLike) -> Path:
    """Default metadata sidecar path for a code file."""
    return Path(str(path) + ".meta.jsonl")


def validate_embeddings(data: np.ndarray) -> np.ndarray:
    """Check an (n, d) float matrix: 2-d, d >= 1, all values finite.

    Returns the array as float32, C-contiguous.
    """
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"embedding matrix must be 2-d, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ValueError("embedding matrix needs at least one dimension")
    if not np.isfinite(arr).all():
        raise ValueError("embedding matrix contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class QuantizationParams:
    """Per-dimension affine range for 8-bit scalar quantization."""

    lo: np.ndarray  # (d,) float32, per-dimension minimum
    hi: np.ndarray  # (d,) float32, per-dimension maximum
    levels: int = QUANT_LEVELS

    def __post_init__(self):
        lo = np.ascontiguousarray(self.lo, dtype=np.float32)
        hi = np.ascontiguousarray(self.hi, dtype=np.float32)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.ndim != 1 or hi.shape != lo.shape:
            raise ValueError("lo and hi must be 1-d arrays of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("quantization ranges must be finite")
        if np.any(lo > hi):
            raise ValueError("lo[j] must not exceed hi[j]")
        if self.levels != QUANT_LEVELS:
            raise ValueError(f"only {QUANT_LEVELS}-level (8-bit) quantization is supported")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]


@dataclass(frozen=True)
class CatalogRecord:
    """Row metadata: stable id, source locator, optional eval-only class label."""

    id: int
    uri: str
    label: int | None = None

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("record id must be non-negative")
        if not self.uri:
            raise ValueError("record uri must be non-empty")


@dataclass
class QuantizedCatalog:
    """In-memory catalog: quantization params, uint8 codes, and row metadata."""

    params: QuantizationParams
    codes: np.ndarray  # (n, d) uint8, row-major
    records: list[CatalogRecord] = field(default_factory=list)

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        if self.codes.ndim != 2:
            raise ValueError(f"codes must be 2-d, got shape {self.codes.shape}")
        if self.codes.shape[1] != self.params.dim:
            raise ValueError(
                f"codes have {self.codes.shape[1]} dims, params expect {self.params.dim}"
            )
        if len(self.records) != self.codes.shape[0]:
            raise ValueError(
                f"{len(self.records)} records for {self.codes.shape[0]} code rows"
            )
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("record ids must be unique within a catalog")

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def row_of_id(self) -> dict[int, int]:
        """Map record id -> row index."""
        return {r.id: i for i, r in enumerate(self.records)}


def storage_reduction_factor(d_in: int, d_out: int) -> float:
    """Size ratio of d_in float32 values vs d_out uint8 codes (e.g. 512->32 gives 64)."""
    if d_in < 1 or d_out < 1:
        raise ValueError("dimensions must be >= 1")
    return (d_in * 4) / (d_out * 1)


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_catalog(
    catalog: QuantizedCatalog,
    path: str | os.PathLike,
    meta_path: str | os.PathLike | None = None,
) -> None:
    """Serialize a catalog to its binary code file plus JSONL metadata sidecar.

    Writes are atomic (temp file + rename); a round-trip through
    :func:`read_catalog` reproduces the catalog bit-exactly.
    """
    path = Path(path)
    meta = Path(meta_path) if meta_path is not None else meta_path_for(path)

    header = _HEADER.pack(MAGIC, FORMAT_VERSION, catalog.dim, catalog.n, catalog.params.levels)
    lo = catalog.params.lo.astype("<f4").tobytes()
    hi = catalog.params.hi.astype("<f4").tobytes()
    codes = np.ascontiguousarray(catalog.codes).tobytes()
    _atomic_write(path, header + lo + hi + codes)

    lines = []
    for rec in catalog.records:
        lines.append(
            json.dumps({"id": rec.id, "uri": rec.uri, "label": rec.label}, ensure_ascii=False)
        )
    payload = ("\n".join(lines) + "\n") if lines else ""
    _atomic_write(meta, payload.encode("utf-8"))


def read_header(path: str | os.PathLike) -> tuple[int, int, int]:
    """Parse just the fixed header of a code file; returns (d, n, levels).

    Cheap: does not touch the code section, so callers can list large
    catalogs without loading them.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise CatalogFormatError(f"{path}: file too short for header")
    magic, version, d, n, levels = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise CatalogFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CatalogFormatError(f"{path}: unsupported format version {version}")
    if levels != QUANT_LEVELS:
        raise CatalogFormatError(f"{path}: unsupported level count {levels}")
    return d, n, levels


def read_catalog(
    path: str | os.PathLike,
    meta_path: str | os.PathLike | None = None,
) -> QuantizedCatalog:
    """Load a catalog written by :func:`write_catalog`, checking all invariants."""
    path = Path(path)
    meta = Path(meta_path) if meta_path is not None else meta_path_for(path)
    d, n, _ = read_header(path)

    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        ranges = fh.read(8 * d)
        if len(ranges) < 8 * d:
            raise CatalogFormatError(f"{path}: truncated quantization ranges")
        lo = np.frombuffer(ranges[: 4 * d], dtype="<f4").copy()
        hi = np.frombuffer(ranges[4 * d :], dtype="<f4").copy()
        code_bytes = fh.read()
    if len(code_bytes) != n * d:
        raise CatalogFormatError(
            f"{path}: header declares {n} rows x {d} dims = {n * d} code bytes, "
            f"found {len(code_bytes)}"
        )
    codes = np.frombuffer(code_bytes, dtype=np.uint8).reshape(n, d).copy()

    records = _read_records(meta)
    if len(records) != n:
        raise CatalogFormatError(
            f"{meta}: {len(records)} metadata records for {n} code rows"
        )
    return QuantizedCatalog(params=QuantizationParams(lo=lo, hi=hi), codes=codes, records=records)


def _read_records(meta: Path) -> list[CatalogRecord]:
    records = []
    with open(meta, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    CatalogRecord(id=int(obj["id"]), uri=obj["uri"], label=obj.get("label"))
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise CatalogFormatError(f"{meta}:{lineno}: bad metadata record: {exc}") from exc
    return records
