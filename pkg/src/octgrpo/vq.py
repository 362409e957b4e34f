"""Codebook lookup and k-means codebook training for octant features."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .codec import OctantSequence, morton_positions
from .errors import FormatError, QuantizationError

CODEBOOK_MAGIC = b"CRCB"
PAPER_CODEBOOK_SIZE = 8192
DESK_CODEBOOK_SIZE = 256

# tokens per distance block; bounds the (chunk, K, dim) temporary
_CHUNK_ELEMS = 1 << 22


class Codebook:
    def __init__(self, codes):
        codes = np.array(codes, dtype=float, copy=True)
        if codes.ndim != 2 or codes.shape[0] < 2:
            raise QuantizationError(f"codebook needs shape (K>=2, dim), got {codes.shape}")
        if not np.all(np.isfinite(codes)):
            raise QuantizationError("codebook entries must be finite")
        codes.setflags(write=False)
        self.codes = codes

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def __repr__(self) -> str:
        return f"Codebook(K={self.size}, dim={self.dim})"


def sq_distances(x: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances, computed by differences rather than the
    dot-product expansion so that exact ties stay exact."""
    out = np.empty((len(x), len(codes)))
    step = max(1, _CHUNK_ELEMS // max(1, codes.size))
    for i in range(0, len(x), step):
        diff = x[i:i + step, None, :] - codes[None, :, :]
        out[i:i + step] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def nearest(x, codes) -> np.ndarray:
    # argmin returns the first minimum, which is the lowest-index tie-break
    return sq_distances(np.asarray(x, float), np.asarray(codes, float)).argmin(axis=1)


def quantize(seq: OctantSequence, cb: Codebook) -> OctantSequence:
    if seq.features is None:
        raise QuantizationError("sequence has no features to quantize")
    if seq.features.shape[1] != cb.dim:
        raise QuantizationError(f"feature width {seq.features.shape[1]} != codebook dim {cb.dim}")
    return OctantSequence(seq.depth, seq.positions, indices=nearest(seq.features, cb.codes))


def dequantize(indices, cb: Codebook, depth: int | None = None) -> OctantSequence:
    """Look up code rows; ``indices`` may be an index array or an indexed sequence."""
    if isinstance(indices, OctantSequence):
        depth, idx = indices.depth, indices.indices
        if idx is None:
            raise QuantizationError("sequence carries no indices")
    else:
        idx = indices
    idx = np.asarray(idx, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= cb.size):
        raise QuantizationError(f"index out of range for codebook of size {cb.size}")
    if depth is None:
        depth = {8**d: d for d in (1, 2, 3, 4)}.get(len(idx))
        if depth is None:
            raise QuantizationError(f"{len(idx)} indices do not match any octant depth")
    return OctantSequence(depth, morton_positions(2**depth), features=cb.codes[idx].copy(), indices=idx)


def utilization(indices, k: int) -> float:
    idx = np.concatenate([np.ravel(np.asarray(i)) for i in indices]) if isinstance(indices, (list, tuple)) else np.ravel(indices)
    return len(np.unique(idx)) / k


# -- k-means -----------------------------------------------------------------

def _kmeans_pp(points, weights, k, rng):
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    first = rng.choice(n, p=weights / weights.sum())
    centers[0] = points[first]
    d2 = sq_distances(points, centers[:1])[:, 0]
    for j in range(1, k):
        mass = weights * d2
        total = mass.sum()
        if total <= 0:
            raise QuantizationError("too-few-samples: fewer distinct vectors than codes")
        pick = rng.choice(n, p=mass / total)
        centers[j] = points[pick]
        d2 = np.minimum(d2, sq_distances(points, centers[j:j + 1])[:, 0])
    return centers


def kmeans(points, k: int, iters: int, seed: int, weights=None):
    """Weighted Lloyd iterations from a k-means++ start.

    Returns ``(centers, history)`` where ``history[t]`` is the weighted mean
    squared assignment distance at the start of iteration ``t`` and the last
    entry is the distortion of the returned centers.
    """
    points = np.asarray(points, dtype=float)
    weights = np.ones(len(points)) if weights is None else np.asarray(weights, dtype=float)
    if len(points) < k:
        raise QuantizationError(f"too-few-samples: {len(points)} distinct vectors for K={k}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, weights, k, rng)
    wsum = weights.sum()
    history = []
    for _ in range(iters + 1):
        d = sq_distances(points, centers)
        assign = d.argmin(axis=1)
        dmin = d[np.arange(len(points)), assign]
        history.append(float(weights @ dmin / wsum))
        if len(history) > iters:
            break
        counts = np.bincount(assign, weights=weights, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, points * weights[:, None])
        live = counts > 0
        centers[live] = sums[live] / counts[live, None]
        if not live.all():
            # reseed each empty cluster on the point farthest from its centroid
            far = dmin.copy()
            for j in np.flatnonzero(~live):
                p = int(far.argmax())
                centers[j] = points[p]
                far[p] = -1.0
    return centers, history


def train_kmeans(dataset, k: int = DESK_CODEBOOK_SIZE, iters: int = 20, seed: int = 0,
                 history: list | None = None) -> Codebook:
    """Train a ``k``-entry codebook on octant features.

    ``dataset`` is an ``(N, dim)`` array or a collection of feature-carrying
    sequences. Duplicate rows are folded into weights, so the result depends
    on the multiset of vectors and ``seed`` only.
    """
    if isinstance(dataset, np.ndarray):
        x = dataset
    else:
        x = np.concatenate([s.features if isinstance(s, OctantSequence) else np.asarray(s) for s in dataset])
    x = np.asarray(x, dtype=float)
    if len(x) < k:
        raise QuantizationError(f"too-few-samples: {len(x)} tokens for K={k}")
    pts, counts = np.unique(x, axis=0, return_counts=True)
    if len(pts) < k:
        raise QuantizationError(f"too-few-samples: only {len(pts)} distinct vectors for K={k}")
    centers, hist = kmeans(pts, k, iters, seed, weights=counts.astype(float))
    if history is not None:
        history.extend(hist)
    return Codebook(_dedup(centers, pts))


def _dedup(centers, pts):
    _, first = np.unique(centers, axis=0, return_index=True)
    if len(first) == len(centers):
        return centers
    dup = np.setdiff1d(np.arange(len(centers)), first)
    far = sq_distances(pts, centers).min(axis=1)
    for j in dup:
        p = int(far.argmax())
        centers[j] = pts[p]
        far[p] = -1.0
    return centers


# -- CRCB files --------------------------------------------------------------

def write_codebook(path, cb: Codebook) -> None:
    header = CODEBOOK_MAGIC + struct.pack("<2I", cb.size, cb.dim)
    Path(path).write_bytes(header + cb.codes.astype("<f4").tobytes())


def read_codebook(path) -> Codebook:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError("truncated codebook header")
    if data[:4] != CODEBOOK_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {CODEBOOK_MAGIC!r}")
    k, dim = struct.unpack("<2I", data[4:12])
    need = 4 * k * dim
    if len(data) - 12 != need:
        raise FormatError(f"codebook payload is {len(data) - 12} bytes, expected {need}")
    codes = np.frombuffer(data[12:], dtype="<f4").astype(float).reshape(k, dim)
    try:
        return Codebook(codes)
    except QuantizationError as exc:
        raise FormatError(str(exc)) from exc
