"""Binary occupancy volumes and the CRVX grid file format.

Cells are indexed ``[x, y, z]``. Whenever a grid is linearized (file payload,
bit packing) x varies fastest, then y, then z.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

GRID_MAGIC = b"CRVX"
GRID_VERSION = 1
# refuse to allocate payloads beyond this many cells when reading
MAX_CELLS = 1 << 30


def _check_dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise DimensionError(f"expected 3 dims, got {dims}")
    for d in dims:
        if d < 4 or d % 4:
            raise DimensionError(f"every dim must be >= 4 and divisible by 4, got {dims}")
    return dims


class VoxelGrid:
    """Immutable binary occupancy volume."""

    __slots__ = ("_occ", "cell_size")

    def __init__(self, occupancy, cell_size: float | None = None):
        occ = np.array(occupancy, dtype=bool, copy=True)
        if occ.ndim != 3:
            raise DimensionError(f"occupancy must be 3-D, got shape {occ.shape}")
        _check_dims(occ.shape)
        occ.setflags(write=False)
        self._occ = occ
        self.cell_size = float(cell_size) if cell_size is not None else 1.0 / occ.shape[0]

    @classmethod
    def empty(cls, dims=(64, 64, 64), cell_size: float | None = None) -> "VoxelGrid":
        return cls(np.zeros(_check_dims(dims), dtype=bool), cell_size)

    @classmethod
    def full(cls, dims=(64, 64, 64), cell_size: float | None = None) -> "VoxelGrid":
        return cls(np.ones(_check_dims(dims), dtype=bool), cell_size)

    @property
    def occupancy(self) -> np.ndarray:
        return self._occ

    @property
    def dims(self) -> tuple[int, int, int]:
        return self._occ.shape  # type: ignore[return-value]

    @property
    def count(self) -> int:
        return int(self._occ.sum())

    @property
    def fill_fraction(self) -> float:
        return self.count / self._occ.size

    def linear(self) -> np.ndarray:
        """Occupancy flattened x-fastest."""
        return self._occ.transpose(2, 1, 0).ravel()

    def packed(self) -> bytes:
        return np.packbits(self.linear(), bitorder="little").tobytes()

    @classmethod
    def from_packed(cls, dims, payload: bytes, cell_size: float | None = None) -> "VoxelGrid":
        dx, dy, dz = _check_dims(dims)
        n = dx * dy * dz
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little", count=n)
        return cls(bits.reshape(dz, dy, dx).transpose(2, 1, 0).astype(bool), cell_size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self._occ, other._occ))

    def __hash__(self):
        return hash((self.dims, self.packed()))

    def __repr__(self) -> str:
        return f"VoxelGrid(dims={self.dims}, occupied={self.count})"


def iou(a: VoxelGrid, b: VoxelGrid) -> float:
    if a.dims != b.dims:
        raise DimensionError(f"dimension mismatch: {a.dims} vs {b.dims}")
    union = np.count_nonzero(a.occupancy | b.occupancy)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.occupancy & b.occupancy) / union


def write_grid(path, grid: VoxelGrid) -> None:
    header = GRID_MAGIC + struct.pack("<4I", GRID_VERSION, *grid.dims)
    Path(path).write_bytes(header + grid.packed())


def read_grid(path) -> VoxelGrid:
    return parse_grid(Path(path).read_bytes())


def parse_grid(data: bytes) -> VoxelGrid:
    if len(data) < 20:
        raise FormatError("truncated header")
    if data[:4] != GRID_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {GRID_MAGIC!r}")
    version, dx, dy, dz = struct.unpack("<4I", data[4:20])
    if version != GRID_VERSION:
        raise FormatError(f"unsupported grid version {version}")
    n = dx * dy * dz
    if n > MAX_CELLS:
        raise FormatError(f"dims overflow: {dx}x{dy}x{dz}")
    try:
        dims = _check_dims((dx, dy, dz))
    except DimensionError as exc:
        raise FormatError(str(exc)) from exc
    need = (n + 7) // 8
    payload = data[20:]
    if len(payload) < need:
        raise FormatError(f"truncated payload: {len(payload)} of {need} bytes")
    return VoxelGrid.from_packed(dims, payload[:need])
