"""Triangle meshes: voxel surface extraction, mass properties, topology and OBJ IO."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError, ShapeError
from ..voxel import VoxelGrid


class TriMesh:
    """Vertices in meters (+z up) and vertex-index triangles.

    Faces repeating a vertex index are dropped on construction.
    """

    def __init__(self, vertices, faces):
        v = np.asarray(vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ShapeError("face index out of range")
        keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
        self.vertices = v
        self.faces = f[keep]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """Corner coordinates, shape (F, 3, 3)."""
        return self.vertices[self.faces]

    def __add__(self, other: "TriMesh") -> "TriMesh":
        return TriMesh(np.vstack([self.vertices, other.vertices]),
                       np.vstack([self.faces, other.faces + len(self.vertices)]))

    def __repr__(self) -> str:
        return f"TriMesh(vertices={len(self.vertices)}, faces={self.n_faces})"


def exposed_faces(occ: np.ndarray):
    """Yield ``(axis, sign, cells)`` for every voxel face whose neighbor is empty."""
    padded = np.pad(occ, 1)
    core = (slice(1, -1),) * 3
    for axis in range(3):
        for sign in (1, -1):
            nb = list(core)
            nb[axis] = slice(1 + sign, padded.shape[axis] - 1 + sign)
            yield axis, sign, np.argwhere(occ & ~padded[tuple(nb)])


def extract_surface(grid: VoxelGrid) -> TriMesh:
    """Block surface: two outward-wound triangles per exposed voxel face."""
    dims = np.asarray(grid.dims)
    quads = []
    for axis, sign, cells in exposed_faces(grid.occupancy):
        if not len(cells):
            continue
        u, v = (axis + 1) % 3, (axis + 2) % 3
        eu, ev = np.eye(3, dtype=np.int64)[u], np.eye(3, dtype=np.int64)[v]
        base = cells.copy()
        if sign > 0:
            base[:, axis] += 1
        corners = np.stack([base, base + eu, base + eu + ev, base + ev], axis=1)
        if sign < 0:
            corners = corners[:, ::-1]
        quads.append(corners)
    if not quads:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    corners = np.concatenate(quads)  # (Q, 4, 3) lattice points
    stride = dims + 1
    keys = corners[..., 0] + stride[0] * (corners[..., 1] + stride[1] * corners[..., 2])
    uniq, inv = np.unique(keys.ravel(), return_inverse=True)
    inv = inv.reshape(-1, 4)
    lattice = np.stack([uniq % stride[0], (uniq // stride[0]) % stride[1], uniq // (stride[0] * stride[1])], axis=1)
    faces = np.concatenate([inv[:, [0, 1, 2]], inv[:, [0, 2, 3]]])
    return TriMesh(lattice * grid.cell_size, faces)


def center_of_mass(obj) -> np.ndarray:
    """Uniform-density center of mass of a grid (cell centers) or a mesh.

    Meshes use the signed-tetrahedron volume centroid; an open mesh with no
    enclosed volume falls back to the area-weighted surface centroid.
    """
    if isinstance(obj, VoxelGrid):
        cells = np.argwhere(obj.occupancy)
        if not len(cells):
            raise ShapeError("center of mass of an empty grid")
        return (cells.mean(axis=0) + 0.5) * obj.cell_size
    tri = obj.triangles()
    if not len(tri):
        raise ShapeError("center of mass of an empty mesh")
    # translate to the vertex mean first to keep the tetra sums well-conditioned
    origin = obj.vertices[np.unique(obj.faces)].mean(axis=0)
    a, b, c = (tri[:, i] - origin for i in range(3))
    vol = np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0
    total = vol.sum()
    scale = np.abs(vol).sum()
    if scale > 0 and abs(total) > 1e-9 * scale:
        return origin + (vol[:, None] * (a + b + c) / 4.0).sum(axis=0) / total
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    if area.sum() == 0:
        return origin
    return origin + (area[:, None] * (a + b + c) / 3.0).sum(axis=0) / area.sum()


def support_footprint(mesh: TriMesh, tol_fraction: float = 0.02) -> np.ndarray:
    """xy of vertices within the lowest ``tol_fraction`` of the mesh height."""
    used = mesh.vertices[np.unique(mesh.faces)] if mesh.n_faces else mesh.vertices
    if not len(used):
        raise ShapeError("support footprint of an empty mesh")
    z = used[:, 2]
    zmin, zmax = z.min(), z.max()
    band = used[z <= zmin + tol_fraction * (zmax - zmin)]
    return band[:, :2]


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, a: int) -> int:
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def connected_components(mesh: TriMesh) -> list[int]:
    """Face counts per component (faces joined when they share an edge), descending."""
    f = mesh.faces
    n = len(f)
    if n == 0:
        return []
    edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    owner = np.tile(np.arange(n), 3)
    key = edges[:, 0] * (len(mesh.vertices) + 1) + edges[:, 1]
    order = np.argsort(key, kind="stable")
    key, owner = key[order], owner[order]
    same = np.flatnonzero(key[1:] == key[:-1])
    uf = UnionFind(n)
    for i in same.tolist():
        uf.union(int(owner[i]), int(owner[i + 1]))
    roots = np.fromiter((uf.find(i) for i in range(n)), dtype=np.int64, count=n)
    return sorted(np.bincount(roots)[np.unique(roots)].tolist(), reverse=True)


# -- OBJ ---------------------------------------------------------------------

def write_obj(path, mesh: TriMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated, other records ignored."""
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError("vertex with fewer than 3 coordinates")
                verts.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                ids = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    ids.append(i - 1 if i > 0 else len(verts) + i)
                if len(ids) < 3:
                    raise ValueError("face with fewer than 3 vertices")
                faces.extend([ids[0], ids[k], ids[k + 1]] for k in range(1, len(ids) - 1))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    try:
        return TriMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ShapeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
