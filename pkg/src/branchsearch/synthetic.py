"""Seeded synthetic data used by tests, the eval harness, and the demo scripts."""

from __future__ import annotations

import numpy as np

from .catalog import CatalogRecord, QuantizationParams, QuantizedCatalog


def unit_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize rows."""
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def paired_views(
    n_pairs: int,
    n_classes: int = 16,
    item_noise: float = 3e-4,
    view_noise: float = 1e-4,
    seed: int = 0,
    dim: int = 512,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Paired views around per-item centers drawn from class prototypes.

    Each pair has a persistent center (unit-sphere class prototype plus a
    Gaussian item offset); its two views are that center plus independent
    per-view noise, re-normalized. The item offset is what alignment
    training can latch onto; the view noise is what it must ignore.

    Returns (view_a, view_b, item_centers, class_ids); views and centers are
    (n_pairs, dim) float32 rows on the unit sphere.
    """
    rng = np.random.default_rng(seed)
    protos = unit_rows(rng.normal(size=(n_classes, dim)))
    cls = rng.integers(0, n_classes, size=n_pairs)
    centers = unit_rows(protos[cls] + item_noise * rng.normal(size=(n_pairs, dim)))
    a = unit_rows(centers + view_noise * rng.normal(size=(n_pairs, dim)))
    b = unit_rows(centers + view_noise * rng.normal(size=(n_pairs, dim)))
    return a.astype(np.float32), b.astype(np.float32), centers.astype(np.float32), cls


def clustered_codes(
    n: int,
    dim: int = 32,
    n_classes: int = 10,
    spread: float = 12.0,
    anisotropy: float = 4.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned anisotropic Gaussian clusters in uint8 code space.

    Each class gets per-dimension scales log-uniform in
    [spread/anisotropy, spread*anisotropy], so clusters are elongated boxes
    rather than balls and neighbouring classes interleave along their long
    axes. Returns (codes, labels).
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(40, 216, size=(n_classes, dim))
    log_a = np.log(anisotropy)
    scales = spread * np.exp(rng.uniform(-log_a, log_a, size=(n_classes, dim)))
    labels = rng.integers(0, n_classes, size=n)
    pts = centers[labels] + scales[labels] * rng.normal(size=(n, dim))
    codes = np.clip(np.rint(pts), 0, 255).astype(np.uint8)
    return codes, labels


def catalog_from_codes(
    codes: np.ndarray,
    labels: np.ndarray | None = None,
    uri_prefix: str = "synthetic://item/",
    lo: float = 0.0,
    hi: float = 1.0,
) -> QuantizedCatalog:
    """Wrap raw uint8 codes in a catalog with sequential ids and synthetic URIs."""
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    d = codes.shape[1]
    params = QuantizationParams(lo=np.full(d, lo, np.float32), hi=np.full(d, hi, np.float32))
    records = [
        CatalogRecord(
            id=i,
            uri=f"{uri_prefix}{i}",
            label=int(labels[i]) if labels is not None else None,
        )
        for i in range(codes.shape[0])
    ]
    return QuantizedCatalog(params=params, codes=codes, records=records)


def random_catalog(n: int, dim: int = 32, seed: int = 0) -> QuantizedCatalog:
    """Uniform random codes, handy for adversarial index/model checks."""
    rng = np.random.default_rng(seed)
    return catalog_from_codes(rng.integers(0, 256, size=(n, dim), dtype=np.uint8).astype(np.uint8))
