"""Procedural test shapes.

Each kind expands into a union of axis-aligned boxes and spheres in cell
units, which is then rasterized by testing cell centers. Shapes rest on the
ground plane (z = 0) unless a kind says otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .voxel import VoxelGrid, _check_dims

KINDS = ("sphere", "box", "l_bracket", "table", "two_blobs", "floating_pair", "overhang")


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown shape kind {self.kind!r}; expected one of {KINDS}")


def _box(lo, hi):
    return ("box", np.asarray(lo, float), np.asarray(hi, float))


def _sphere(center, radius):
    return ("sphere", np.asarray(center, float), float(radius))


def _primitives(kind: str, p: dict, dims) -> list:
    dx, dy, dz = dims
    cx, cy = dx / 2, dy / 2

    if kind == "sphere":
        r = p.get("radius", min(dims) * 3 / 8)
        c = (p.get("cx", cx), p.get("cy", cy), p.get("cz", dz / 2))
        return [_sphere(c, r)]

    if kind == "box":
        size = p.get("size")
        sx = p.get("sx", size if size is not None else dx / 2)
        sy = p.get("sy", size if size is not None else dy / 2)
        sz = p.get("sz", size if size is not None else dz / 2)
        ox = p.get("ox", cx - sx / 2)
        oy = p.get("oy", cy - sy / 2)
        oz = p.get("oz", 0.0)
        return [_box((ox, oy, oz), (ox + sx, oy + sy, oz + sz))]

    if kind == "l_bracket":
        # two boxes of equal volume arm*width*thick: a foot and an upright on it
        a = p.get("arm", 24)
        w = p.get("width", 16)
        t = p.get("thick", 8)
        ox = p.get("ox", cx - a / 2)
        oy = p.get("oy", cy - w / 2)
        return [
            _box((ox, oy, 0), (ox + a, oy + w, t)),
            _box((ox, oy, t), (ox + t, oy + w, t + a)),
        ]

    if kind == "table":
        tx, ty = p.get("top_x", 40), p.get("top_y", 28)
        th = p.get("top_thick", 4)
        lh = p.get("leg_height", 20)
        ls = p.get("leg_side", 4)
        x0, y0 = cx - tx / 2, cy - ty / 2
        prims = [_box((x0, y0, lh), (x0 + tx, y0 + ty, lh + th))]
        for lx in (x0, x0 + tx - ls):
            for ly in (y0, y0 + ty - ls):
                prims.append(_box((lx, ly, 0), (lx + ls, ly + ls, lh)))
        return prims

    if kind == "two_blobs":
        r = p.get("radius", 10)
        gap = p.get("gap", 4)
        half = r + gap / 2
        return [_sphere((cx - half, cy, r), r), _sphere((cx + half, cy, r), r)]

    if kind == "floating_pair":
        s = p.get("side", 16)
        gap = p.get("gap", 8)
        lo = (cx - s / 2, cy - s / 2)
        return [
            _box((lo[0], lo[1], 0), (lo[0] + s, lo[1] + s, s)),
            _box((lo[0], lo[1], s + gap), (lo[0] + s, lo[1] + s, 2 * s + gap)),
        ]

    if kind == "overhang":
        # block of side s on a p x p pedestal of height h; block center sits
        # `offset` cells beyond the pedestal's +x face (offset = -p/2 centers it)
        s = p.get("side", 20)
        ps = p.get("pedestal", 4)
        h = p.get("pedestal_height", 8)
        off = p.get("offset", 8)
        bc = ps + off
        xmin, xmax = min(0.0, bc - s / 2), max(ps, bc + s / 2)
        px = p.get("px", np.floor(cx - (xmin + xmax) / 2))
        return [
            _box((px, cy - ps / 2, 0), (px + ps, cy + ps / 2, h)),
            _box((px + bc - s / 2, cy - s / 2, h), (px + bc + s / 2, cy + s / 2, h + s)),
        ]

    raise ShapeError(f"unknown shape kind {kind!r}")


def _bounds(prim):
    if prim[0] == "box":
        return prim[1], prim[2]
    c, r = prim[1], prim[2]
    return c - r, c + r


def gen_primitive(spec: ShapeSpec, dims=(64, 64, 64)) -> VoxelGrid:
    """Rasterize ``spec`` into a grid; a pure function of ``(spec, dims)``."""
    dims = _check_dims(dims)
    prims = _primitives(spec.kind, dict(spec.params), dims)

    jitter = int(spec.params.get("jitter", 0))
    shift = np.zeros(3)
    if jitter:
        rng = np.random.default_rng(spec.seed)
        shift[:2] = rng.integers(-jitter, jitter + 1, size=2)

    upper = np.asarray(dims, float)
    for prim in prims:
        lo, hi = _bounds(prim)
        if np.any(hi < lo):
            raise ShapeError(f"negative extent in {spec.kind}")
        if np.any(hi > lo) and (np.any(lo + shift < 0) or np.any(hi + shift > upper)):
            raise ShapeError(f"{spec.kind} exceeds grid bounds {dims}")

    x, y, z = (np.arange(n) + 0.5 for n in dims)
    X, Y, Z = np.meshgrid(x - shift[0], y - shift[1], z - shift[2], indexing="ij", sparse=True)
    occ = np.zeros(dims, dtype=bool)
    for prim in prims:
        if prim[0] == "box":
            lo, hi = prim[1], prim[2]
            occ |= (X >= lo[0]) & (X < hi[0]) & (Y >= lo[1]) & (Y < hi[1]) & (Z >= lo[2]) & (Z < hi[2])
        else:
            c, r = prim[1], prim[2]
            occ |= (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2 <= r * r
    return VoxelGrid(occ)


def corpus_specs(n: int, seed: int = 42) -> list[ShapeSpec]:
    """A mixed sphere/box/bracket/table corpus used for codebook training."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n):
        k = i % 4
        if k == 0:
            specs.append(ShapeSpec("sphere", {"radius": float(rng.uniform(8, 28))}))
        elif k == 1:
            sx, sy, sz = (int(v) for v in rng.integers(8, 48, size=3))
            specs.append(ShapeSpec("box", {"sx": sx, "sy": sy, "sz": sz, "jitter": 6},
                                   seed=int(rng.integers(1 << 31))))
        elif k == 2:
            specs.append(ShapeSpec("l_bracket", {"arm": int(rng.integers(16, 32)),
                                                 "width": int(rng.integers(8, 24)),
                                                 "thick": int(rng.integers(4, 10))}))
        else:
            specs.append(ShapeSpec("table", {"top_x": int(rng.integers(24, 48)),
                                             "top_y": int(rng.integers(16, 40)),
                                             "leg_height": int(rng.integers(8, 30))}))
    return specs
