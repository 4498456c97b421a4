"""Projection head: 512-d embeddings -> 32-d unit sphere.

A two-layer fully connected network (512 -> 256 -> 32, rectified hidden
layer, L2-normalized output) trained with symmetric InfoNCE alignment over
paired views plus a differential-entropy regularizer (KoLeo) that pushes
each batch point away from its nearest in-batch neighbour:

    L_koleo = -(1/n) sum_i log(min_{j != i} ||x_i - x_j||)

All gradients are analytic (numpy only); tests check them against central
finite differences. Training is plain seeded mini-batch SGD and fully
deterministic.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

HEAD_MAGIC = b"CBHD"
HEAD_VERSION = 1
DEFAULT_DIMS = (512, 256, 32)

_HEAD_HEADER = struct.Struct("<4sHH")  # magic, version, n_layers


class DegenerateBatchError(ValueError):
    """A KoLeo batch contains duplicate rows (zero nearest-neighbour distance)."""


class HeadFormatError(ValueError):
    pass


@dataclass
class HeadParams:
    """Weights/biases of the two fully connected layers."""

    w1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (out, hidden)
    b2: np.ndarray  # (out,)

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in head parameter {name}")
            setattr(self, name, arr)
        if self.w1.shape[0] != self.b1.shape[0] or self.w2.shape[0] != self.b2.shape[0]:
            raise ValueError("bias shapes do not match weight rows")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError("layer dimensions do not chain")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.w1.shape[1], self.w1.shape[0], self.w2.shape[0])

    def copy(self) -> "HeadParams":
        return HeadParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


@dataclass(frozen=True)
class TrainConfig:
    koleo_weight: float = 0.1
    temperature: float = 0.07
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.koleo_weight < 0:
            raise ValueError("koleo_weight must be >= 0")
        if self.temperature <= 0 or self.learning_rate <= 0:
            raise ValueError("temperature and learning_rate must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (KoLeo needs an in-batch neighbour)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainLog:
    """Per-epoch mean loss components, appended by train_head."""

    total: list[float] = field(default_factory=list)
    align: list[float] = field(default_factory=list)
    koleo: list[float] = field(default_factory=list)


def init_params(seed: int = 0, dims: tuple[int, int, int] = DEFAULT_DIMS) -> HeadParams:
    """Seeded He/Xavier initialization; biases zero."""
    d_in, d_hidden, d_out = dims
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_hidden, d_in))
    w2 = rng.normal(0.0, np.sqrt(1.0 / d_hidden), size=(d_out, d_hidden))
    return HeadParams(w1=w1, b1=np.zeros(d_hidden), w2=w2, b2=np.zeros(d_out))


def _nearest_in_batch(batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(nearest index, distance) per row, lowest index on ties; errors on duplicates."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need an (n >= 2, d) batch")
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, np.inf)
    nn = np.argmin(d2, axis=1)  # first minimum -> lowest index
    rho = np.sqrt(d2[np.arange(x.shape[0]), nn])
    if np.any(rho == 0.0):
        raise DegenerateBatchError("duplicate rows in batch: nearest-neighbour distance is 0")
    return nn, rho


def koleo_loss(batch: np.ndarray) -> float:
    """-(1/n) sum_i log(distance from row i to its nearest other row)."""
    _, rho = _nearest_in_batch(batch)
    return float(-np.mean(np.log(rho)))


def koleo_grad(batch: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`koleo_loss` w.r.t. the batch.

    Each term -log||x_i - x_j|| contributes -(x_i - x_j)/||x_i - x_j||^2 to
    row i and the negation to the achieving neighbour j.
    """
    x = np.asarray(batch, dtype=np.float64)
    nn, rho = _nearest_in_batch(x)
    n = x.shape[0]
    diff = x - x[nn]  # (n, d)
    per_term = -diff / (rho * rho)[:, None] / n
    grad = per_term.copy()
    np.subtract.at(grad, nn, per_term)
    return grad


def forward(params: HeadParams, x: np.ndarray) -> np.ndarray:
    """Unit-norm head output for a single vector or an (n, d_in) batch."""
    y, _ = _forward_cached(params, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return y[0] if np.asarray(x).ndim == 1 else y


def _forward_cached(params: HeadParams, x: np.ndarray):
    pre1 = x @ params.w1.T + params.b1
    h = np.maximum(pre1, 0.0)
    z = h @ params.w2.T + params.b2
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("pre-normalization output is the zero vector")
    y = z / norms[:, None]
    return y, (x, pre1, h, z, norms, y)


def _backward(params: HeadParams, cache, dy: np.ndarray) -> dict[str, np.ndarray]:
    x, pre1, h, _, norms, y = cache
    dz = (dy - y * np.sum(dy * y, axis=1, keepdims=True)) / norms[:, None]
    dh = dz @ params.w2
    dpre1 = dh * (pre1 > 0)
    return {
        "w1": dpre1.T @ x,
        "b1": dpre1.sum(axis=0),
        "w2": dz.T @ h,
        "b2": dz.sum(axis=0),
    }


def _info_nce(u: np.ndarray, v: np.ndarray, tau: float):
    """Symmetric InfoNCE over paired unit vectors; returns (loss, du, dv)."""
    n = u.shape[0]
    s = (u @ v.T) / tau
    ls_row = s - _logsumexp(s, axis=1)[:, None]
    ls_col = s - _logsumexp(s, axis=0)[None, :]
    diag = np.arange(n)
    loss = -0.5 / n * (ls_row[diag, diag].sum() + ls_col[diag, diag].sum())
    p = np.exp(ls_row)
    q = np.exp(ls_col)
    ds = (0.5 / n) * (p + q)
    ds[diag, diag] -= 1.0 / n
    return float(loss), ds @ v / tau, ds.T @ u / tau


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def batch_loss_and_grads(
    params: HeadParams,
    xa: np.ndarray,
    xb: np.ndarray,
    cfg: TrainConfig,
) -> tuple[float, float, float, dict[str, np.ndarray]]:
    """(total, align, koleo) losses and parameter gradients for one pair batch.

    KoLeo is applied to each view's output batch separately and averaged.
    """
    ya, cache_a = _forward_cached(params, xa)
    yb, cache_b = _forward_cached(params, xb)
    l_align, dya, dyb = _info_nce(ya, yb, cfg.temperature)

    l_koleo = 0.0
    if cfg.koleo_weight > 0:
        l_ka = koleo_loss(ya)
        l_kb = koleo_loss(yb)
        l_koleo = 0.5 * (l_ka + l_kb)
        dya = dya + cfg.koleo_weight * 0.5 * koleo_grad(ya)
        dyb = dyb + cfg.koleo_weight * 0.5 * koleo_grad(yb)

    grads_a = _backward(params, cache_a, dya)
    grads_b = _backward(params, cache_b, dyb)
    grads = {k: grads_a[k] + grads_b[k] for k in grads_a}
    total = l_align + cfg.koleo_weight * l_koleo
    return total, l_align, l_koleo, grads


def train_head(
    pairs: tuple[np.ndarray, np.ndarray] | list[tuple[np.ndarray, np.ndarray]],
    cfg: TrainConfig,
    log: TrainLog | None = None,
    dims: tuple[int, int, int] = DEFAULT_DIMS,
) -> HeadParams:
    """Fit the head on paired views by seeded mini-batch SGD.

    ``pairs`` is either a pair of aligned (n, d_in) matrices or a list of
    (view_a, view_b) vector tuples. Trailing batches smaller than 2 rows are
    dropped (KoLeo needs an in-batch neighbour). Raises on non-finite loss.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        xa = np.asarray(pairs[0], dtype=np.float64)
        xb = np.asarray(pairs[1], dtype=np.float64)
    else:
        xa = np.asarray([p[0] for p in pairs], dtype=np.float64)
        xb = np.asarray([p[1] for p in pairs], dtype=np.float64)
    if xa.shape != xb.shape or xa.ndim != 2:
        raise ValueError("paired views must be two aligned (n, d_in) matrices")
    n = xa.shape[0]
    if n < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} pairs, got {n}")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.seed, dims=dims)

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        tot_sum = align_sum = koleo_sum = 0.0
        n_batches = 0
        for lo in range(0, n, cfg.batch_size):
            sel = perm[lo : lo + cfg.batch_size]
            if sel.size < 2:
                continue
            total, l_align, l_koleo, grads = batch_loss_and_grads(params, xa[sel], xb[sel], cfg)
            if not np.isfinite(total):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}: align={l_align} koleo={l_koleo}; "
                    "lower the learning rate or check the input pairs"
                )
            params.w1 -= cfg.learning_rate * grads["w1"]
            params.b1 -= cfg.learning_rate * grads["b1"]
            params.w2 -= cfg.learning_rate * grads["w2"]
            params.b2 -= cfg.learning_rate * grads["b2"]
            tot_sum += total
            align_sum += l_align
            koleo_sum += l_koleo
            n_batches += 1
        if log is not None and n_batches:
            log.total.append(tot_sum / n_batches)
            log.align.append(align_sum / n_batches)
            log.koleo.append(koleo_sum / n_batches)
    return params


def write_head(params: HeadParams, path: str | os.PathLike) -> None:
    """Serialize head parameters: CBHD magic, layer dims, f32 blobs (little-endian)."""
    d_in, d_hidden, d_out = params.dims
    parts = [
        _HEAD_HEADER.pack(HEAD_MAGIC, HEAD_VERSION, 2),
        struct.pack("<3I", d_in, d_hidden, d_out),
        params.w1.astype("<f4").tobytes(),
        params.b1.astype("<f4").tobytes(),
        params.w2.astype("<f4").tobytes(),
        params.b2.astype("<f4").tobytes(),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_head(path: str | os.PathLike) -> HeadParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD_HEADER.size:
        raise HeadFormatError(f"{path}: file too short")
    magic, version, n_layers = _HEAD_HEADER.unpack_from(raw)
    if magic != HEAD_MAGIC:
        raise HeadFormatError(f"{path}: bad magic {magic!r}")
    if version != HEAD_VERSION or n_layers != 2:
        raise HeadFormatError(f"{path}: unsupported version/layout")
    off = _HEAD_HEADER.size
    d_in, d_hidden, d_out = struct.unpack_from("<3I", raw, off)
    off += 12

    def take(count, shape):
        nonlocal off
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float64)
        off += count * 4
        return arr.reshape(shape)

    expected = off + 4 * (d_hidden * d_in + d_hidden + d_out * d_hidden + d_out)
    if len(raw) != expected:
        raise HeadFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return HeadParams(
        w1=take(d_hidden * d_in, (d_hidden, d_in)),
        b1=take(d_hidden, (d_hidden,)),
        w2=take(d_out * d_hidden, (d_out, d_hidden)),
        b2=take(d_out, (d_out,)),
    )
