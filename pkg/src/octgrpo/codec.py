"""Analytic voxel <-> latent codec and octant-block serialization.

A grid with dims ``D`` maps to a latent grid of dims ``D/4`` with 8 channels
per cell. Channel ``c = z*4 + y*2 + x`` holds the occupancy fraction of the
corresponding 2x2x2 sub-octant of the cell's 4^3 voxel block.

``group`` cuts the latent grid into ``2**depth`` blocks per axis, orders the
blocks along a Morton curve and concatenates each block's cells (intra-block
Morton order, cell-major, channel-minor) into one token.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CodecError, FormatError
from .voxel import VoxelGrid

CHANNELS = 8
DEPTHS = (1, 2, 3, 4)
TOKEN_MAGIC = b"CRTK"
TOKEN_VERSION = 1


def _bits_for(side: int) -> int:
    if side < 1 or side & (side - 1):
        raise CodecError(f"side must be a power of two, got {side}")
    return side.bit_length() - 1


def morton_encode(x, y, z, side: int = 8):
    """Interleave coordinate bits: x -> bit 0, y -> bit 1, z -> bit 2 of each triple.

    Accepts ints or integer arrays.
    """
    bits = _bits_for(side)
    x, y, z = (np.asarray(v, dtype=np.int64) for v in (x, y, z))
    for v in (x, y, z):
        if np.any(v < 0) or np.any(v >= side):
            raise CodecError(f"coordinate out of range for side {side}")
    code = np.zeros(np.broadcast(x, y, z).shape, dtype=np.int64)
    for b in range(bits):
        code |= ((x >> b) & 1) << (3 * b)
        code |= ((y >> b) & 1) << (3 * b + 1)
        code |= ((z >> b) & 1) << (3 * b + 2)
    return int(code) if code.ndim == 0 else code


def morton_decode(code, side: int = 8):
    """Inverse of :func:`morton_encode`; returns ``(x, y, z)``."""
    bits = _bits_for(side)
    code = np.asarray(code, dtype=np.int64)
    if np.any(code < 0) or np.any(code >= side**3):
        raise CodecError(f"morton code out of range for side {side}")
    x = np.zeros_like(code)
    y = np.zeros_like(code)
    z = np.zeros_like(code)
    for b in range(bits):
        x |= ((code >> (3 * b)) & 1) << b
        y |= ((code >> (3 * b + 1)) & 1) << b
        z |= ((code >> (3 * b + 2)) & 1) << b
    if code.ndim == 0:
        return int(x), int(y), int(z)
    return x, y, z


def morton_positions(side: int) -> np.ndarray:
    """Block coordinates in Morton order, shape ``(side**3, 3)``."""
    return np.stack(morton_decode(np.arange(side**3), side), axis=1)


def raster_positions(side: int) -> np.ndarray:
    """Block coordinates in raster order, x fastest."""
    z, y, x = np.meshgrid(*(np.arange(side),) * 3, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def locality_stats(order) -> float:
    """Mean Chebyshev distance between consecutive positions of a block-grid permutation."""
    pos = np.asarray(order, dtype=np.int64).reshape(-1, 3)
    n = len(pos)
    side = round(n ** (1 / 3))
    if n == 0 or side**3 != n:
        raise CodecError(f"not a permutation of a cubic block grid ({n} positions)")
    if np.any(pos < 0) or np.any(pos >= side):
        raise CodecError("not a permutation: coordinate out of range")
    keys = pos[:, 0] + side * (pos[:, 1] + side * pos[:, 2])
    if len(np.unique(keys)) != n:
        raise CodecError("not a permutation: repeated positions")
    if n == 1:
        return 0.0
    return float(np.abs(np.diff(pos, axis=0)).max(axis=1).mean())


# -- latent codec ------------------------------------------------------------

def encode_latent(grid: VoxelGrid) -> np.ndarray:
    """Occupancy grid -> latent array of shape ``(dx/4, dy/4, dz/4, 8)``."""
    dx, dy, dz = grid.dims
    if dx % 4 or dy % 4 or dz % 4:
        raise CodecError(f"dims {grid.dims} not divisible by 4")
    occ = grid.occupancy.reshape(dx // 4, 2, 2, dy // 4, 2, 2, dz // 4, 2, 2)
    # axes: (lx, sx, ix, ly, sy, iy, lz, sz, iz); fraction over (ix, iy, iz)
    frac = occ.mean(axis=(2, 5, 8))  # (lx, sx, ly, sy, lz, sz)
    frac = frac.transpose(0, 2, 4, 5, 3, 1)  # (lx, ly, lz, sz, sy, sx)
    return frac.reshape(dx // 4, dy // 4, dz // 4, CHANNELS)


def decode_latent(lat: np.ndarray, cell_size: float | None = None) -> VoxelGrid:
    """Fill a sub-octant iff its channel is >= 0.5."""
    lat = np.asarray(lat)
    if lat.ndim != 4 or lat.shape[3] != CHANNELS:
        raise CodecError(f"latent must have shape (lx, ly, lz, 8), got {lat.shape}")
    lx, ly, lz, _ = lat.shape
    on = (lat >= 0.5).reshape(lx, ly, lz, 2, 2, 2)  # (lx, ly, lz, sz, sy, sx)
    on = on.transpose(0, 5, 1, 4, 2, 3)  # (lx, sx, ly, sy, lz, sz)
    full = np.broadcast_to(on[:, :, None, :, :, None, :, :, None], (lx, 2, 2, ly, 2, 2, lz, 2, 2))
    return VoxelGrid(full.reshape(lx * 4, ly * 4, lz * 4), cell_size)


# -- octant grouping ---------------------------------------------------------

@dataclass
class OctantSequence:
    """Octant tokens in Morton order; carries either features or codebook indices."""

    depth: int
    positions: np.ndarray
    features: np.ndarray | None = None
    indices: np.ndarray | None = None

    def __post_init__(self):
        if self.depth not in DEPTHS:
            raise CodecError(f"depth must be one of {DEPTHS}, got {self.depth}")
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.features is None and self.indices is None:
            raise CodecError("sequence needs features or indices")
        if len(self.positions) != self.length:
            raise CodecError("positions and tokens differ in length")

    @property
    def length(self) -> int:
        return 8**self.depth

    @property
    def width(self) -> int | None:
        return None if self.features is None else self.features.shape[1]

    def check_morton(self) -> None:
        if not np.array_equal(self.positions, morton_positions(2**self.depth)):
            raise CodecError("positions-not-morton: positions are not the Morton enumeration")


def _block_side(lat_shape, depth: int) -> int:
    n = 2**depth
    lx, ly, lz = lat_shape[:3]
    if not (lx == ly == lz):
        raise CodecError(f"grouping needs a cubic latent grid, got {lat_shape[:3]}")
    if lx % n:
        raise CodecError(f"latent side {lx} not divisible by {n} blocks at depth {depth}")
    s = lx // n
    _bits_for(s)
    return s


def group(lat: np.ndarray, depth: int = 3) -> OctantSequence:
    lat = np.asarray(lat, dtype=float)
    if lat.ndim != 4:
        raise CodecError(f"latent must be 4-D, got shape {lat.shape}")
    if depth not in DEPTHS:
        raise CodecError(f"depth must be one of {DEPTHS}, got {depth}")
    n = 2**depth
    s = _block_side(lat.shape, depth)
    c = lat.shape[3]
    blocks = lat.reshape(n, s, n, s, n, s, c).transpose(0, 2, 4, 1, 3, 5, 6)
    pos = morton_positions(n)
    cell = morton_positions(s)
    feats = blocks[pos[:, 0, None], pos[:, 1, None], pos[:, 2, None], cell[None, :, 0], cell[None, :, 1], cell[None, :, 2]]
    return OctantSequence(depth, pos, features=feats.reshape(n**3, s**3 * c))


def ungroup(seq: OctantSequence, channels: int = CHANNELS) -> np.ndarray:
    if seq.features is None:
        raise CodecError("indices-only sequence; dequantize before ungrouping")
    seq.check_morton()
    n = 2**seq.depth
    cells = seq.features.shape[1] // channels
    s = round(cells ** (1 / 3))
    if s**3 * channels != seq.features.shape[1]:
        raise CodecError(f"feature width {seq.features.shape[1]} is not side^3 * {channels}")
    cell = morton_positions(s)
    blocks = np.empty((n, n, n, s, s, s, channels))
    pos = seq.positions
    blocks[pos[:, 0, None], pos[:, 1, None], pos[:, 2, None], cell[None, :, 0], cell[None, :, 1], cell[None, :, 2]] = (
        seq.features.reshape(n**3, s**3, channels))
    return blocks.transpose(0, 3, 1, 4, 2, 5, 6).reshape(n * s, n * s, n * s, channels)


def tokens_to_grid(seq: OctantSequence, cell_size: float | None = None) -> VoxelGrid:
    return decode_latent(ungroup(seq), cell_size)


def grid_to_tokens(grid: VoxelGrid, depth: int = 3) -> OctantSequence:
    return group(encode_latent(grid), depth)


# -- CRTK token files --------------------------------------------------------

def write_tokens(path, seq: OctantSequence, vocab: int = 0) -> None:
    """Write indices (``vocab > 0``) as u16 or features (``vocab == 0``) as f32."""
    if vocab:
        if seq.indices is None:
            raise CodecError("vocab given but sequence has no indices")
        if vocab > 1 << 16:
            raise CodecError(f"vocab {vocab} does not fit u16 indices")
        payload = np.asarray(seq.indices, dtype="<u2").tobytes()
    else:
        if seq.features is None:
            raise CodecError("features-mode file needs features")
        payload = np.asarray(seq.features, dtype="<f4").tobytes()
    header = TOKEN_MAGIC + struct.pack("<4I", TOKEN_VERSION, seq.depth, seq.length, vocab)
    Path(path).write_bytes(header + payload)


def read_tokens(path) -> tuple[OctantSequence, int]:
    """Returns ``(sequence, vocab)``; vocab 0 means the file carries features."""
    data = Path(path).read_bytes()
    if len(data) < 20:
        raise FormatError("truncated token header")
    if data[:4] != TOKEN_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {TOKEN_MAGIC!r}")
    version, depth, count, vocab = struct.unpack("<4I", data[4:20])
    if version != TOKEN_VERSION:
        raise FormatError(f"unsupported token version {version}")
    if depth not in DEPTHS or count != 8**depth:
        raise FormatError(f"inconsistent depth {depth} / count {count}")
    payload = data[20:]
    pos = morton_positions(2**depth)
    if vocab:
        if len(payload) != 2 * count:
            raise FormatError(f"truncated payload: {len(payload)} of {2 * count} bytes")
        idx = np.frombuffer(payload, dtype="<u2").astype(np.int64)
        if np.any(idx >= vocab):
            raise FormatError("token index exceeds vocab")
        return OctantSequence(depth, pos, indices=idx), vocab
    if len(payload) == 0 or len(payload) % (4 * count):
        raise FormatError(f"feature payload of {len(payload)} bytes does not divide into {count} rows")
    feats = np.frombuffer(payload, dtype="<f4").astype(float).reshape(count, -1)
    return OctantSequence(depth, pos, features=feats), 0
