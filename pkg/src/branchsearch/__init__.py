"""branchsearch: interactive search-by-classification over quantized embeddings.

An initial k-nearest-neighbour query over 8-bit quantized embeddings is
refined iteratively: the user labels results positive/negative, a tree
classifier is trained on the labels, and its positive leaf boxes are
evaluated over the whole catalog through k-d tree range queries, returning
every positively classified item instead of a fixed top-k.
"""

from . import catalog, engine, evalharness, head, index, models, quantizer, synthetic

__all__ = [
    "catalog",
    "engine",
    "evalharness",
    "head",
    "index",
    "models",
    "quantizer",
    "synthetic",
]

__version__ = "0.1.0"
