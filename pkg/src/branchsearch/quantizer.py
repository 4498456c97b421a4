"""8-bit scalar quantization of embedding vectors.

Each dimension gets an independent affine map onto the integer grid
{0, ..., 255}: fit takes per-column min/max, encode rounds to the nearest
grid point (ties away from zero) and clamps, decode maps codes back onto
the grid. Degenerate dimensions (hi == lo) encode to 0 and decode to lo.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import QuantizationParams, validate_embeddings


@dataclass(frozen=True)
class Quantizer:
    params: QuantizationParams

    @property
    def dim(self) -> int:
        return self.params.dim

    def encode(self, vectors: np.ndarray) -> np.ndarray:
        return encode(self, vectors)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        return decode(self, codes)


def fit(data: np.ndarray) -> Quantizer:
    """Fit per-dimension ranges to the column min/max of an (n, d) float matrix."""
    arr = validate_embeddings(data)
    if arr.shape[0] < 1:
        raise ValueError("cannot fit a quantizer on an empty matrix")
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    return Quantizer(params=QuantizationParams(lo=lo, hi=hi))


def encode(q: Quantizer, vectors: np.ndarray) -> np.ndarray:
    """Map float vector(s) to uint8 codes.

    code[j] = clamp(round((v[j] - lo[j]) / (hi[j] - lo[j]) * 255), 0, 255)
    with round-half-away-from-zero; degenerate dimensions map to 0.
    Accepts a single (d,) vector or an (n, d) batch.
    """
    v = np.asarray(vectors, dtype=np.float64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != q.dim:
        raise ValueError(f"expected {q.dim}-dim vectors, got {v.shape[1]}")
    if not np.isfinite(v).all():
        raise ValueError("cannot encode non-finite values")

    lo = q.params.lo.astype(np.float64)
    span = q.params.hi.astype(np.float64) - lo
    live = span > 0
    t = np.zeros_like(v)
    t[:, live] = (v[:, live] - lo[live]) / span[live] * 255.0
    # round half away from zero, then clamp into the grid
    rounded = np.where(t >= 0, np.floor(t + 0.5), np.ceil(t - 0.5))
    codes = np.clip(rounded, 0, 255).astype(np.uint8)
    return codes[0] if single else codes


def decode(q: Quantizer, codes: np.ndarray) -> np.ndarray:
    """Map uint8 code(s) back onto grid values: v[j] = lo[j] + code[j]/255 * span[j]."""
    c = np.asarray(codes)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    if c.shape[1] != q.dim:
        raise ValueError(f"expected {q.dim}-dim codes, got {c.shape[1]}")
    lo = q.params.lo.astype(np.float64)
    span = q.params.hi.astype(np.float64) - lo
    out = lo + c.astype(np.float64) / 255.0 * span
    return out[0] if single else out


def max_roundtrip_error(q: Quantizer, vectors: np.ndarray) -> float:
    """Largest |v - decode(encode(v))| over all in-range samples and dimensions,
    measured in units of half a quantization step (<= 1.0 means within bound)."""
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    err = np.abs(v - decode(q, encode(q, v)))
    span = q.params.hi.astype(np.float64) - q.params.lo.astype(np.float64)
    half_step = np.where(span > 0, span / (2 * 255.0), 1.0)
    return float((err / half_step).max()) if err.size else 0.0
