"""Embedding backends.

Two implementations of the same contract (text or image in, 512-d unit
vector out):

* ``HashEncoder`` -- deterministic, dependency-light featurizer: hashed
  character n-grams for text, a fixed random projection of a downscaled
  pixel grid for images. No model weights, runs anywhere, stable across
  processes. Text and images do NOT share a semantic space; this backend
  exists for offline pipelines, plumbing tests, and demos.
* ``ClipEncoder`` -- a real vision-language backbone via ``transformers``
  (extra ``[clip]``); text and images land in the shared space the search
  engine expects in production.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

DIM = 512


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        v = v.copy()
        v[0] = 1.0
        return v
    return v / norm


class HashEncoder:
    """Deterministic fallback featurizer (no pretrained weights)."""

    name = "hash"

    def __init__(self, seed: int = 0, ngram: int = 3, grid: int = 16):
        self.ngram = ngram
        self.grid = grid
        rng = np.random.default_rng(seed)
        # fixed projection from the 3-channel pixel grid to the output space
        self._pixel_proj = rng.normal(size=(grid * grid * 3, DIM)).astype(np.float32)

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        padded = f"\x02{text.lower().strip()}\x03"
        acc = np.zeros(DIM, dtype=np.float64)
        for i in range(max(1, len(padded) - self.ngram + 1)):
            digest = hashlib.blake2b(
                padded[i : i + self.ngram].encode("utf-8"), digest_size=8
            ).digest()
            value = int.from_bytes(digest, "little")
            bucket = value % DIM
            sign = 1.0 if (value >> 9) & 1 else -1.0
            acc[bucket] += sign
        return _unit(acc).astype(np.float32)

    def embed_image(self, image: Image.Image) -> np.ndarray:
        small = image.convert("RGB").resize((self.grid, self.grid), Image.BILINEAR)
        pixels = np.asarray(small, dtype=np.float32).reshape(-1) / 255.0
        pixels -= pixels.mean()
        return _unit(pixels @ self._pixel_proj).astype(np.float32)


class ClipEncoder:
    """Pretrained text-image backbone (requires the ``clip`` extra and
    downloadable or local model weights)."""

    name = "clip"

    def __init__(self, model_id: str = "openai/clip-vit-base-patch32"):
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "the clip backend needs the [clip] extra (transformers + torch)"
            ) from exc
        self._model = CLIPModel.from_pretrained(model_id)
        self._model.eval()
        self._processor = CLIPProcessor.from_pretrained(model_id)

    def embed_text(self, text: str) -> np.ndarray:
        import torch

        if not text.strip():
            raise ValueError("cannot embed empty text")
        with torch.no_grad():
            inputs = self._processor(text=[text], return_tensors="pt", padding=True)
            feats = self._model.get_text_features(**inputs)[0].numpy()
        return _unit(feats.astype(np.float64)).astype(np.float32)

    def embed_image(self, image: Image.Image) -> np.ndarray:
        import torch

        with torch.no_grad():
            inputs = self._processor(images=image.convert("RGB"), return_tensors="pt")
            feats = self._model.get_image_features(**inputs)[0].numpy()
        return _unit(feats.astype(np.float64)).astype(np.float32)


def make_encoder(backend: str = "hash", model_id: str | None = None):
    if backend == "hash":
        return HashEncoder()
    if backend == "clip":
        return ClipEncoder(model_id) if model_id else ClipEncoder()
    raise ValueError(f"unknown backend {backend!r}, expected 'hash' or 'clip'")
