"""Embedding sidecar package."""

from .extract import extract_images
from .features import make_encoder

__all__ = ["extract_images", "make_encoder"]
