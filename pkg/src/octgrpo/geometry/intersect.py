"""Triangle-triangle intersection (Moller interval test), an AABB tree, and
self-intersection pair enumeration by brute force or BVH.

All predicates are vectorized over pairs: ``A`` and ``B`` have shape
``(n, 3, 3)`` (pair, corner, xyz).
"""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh

LEAF_SIZE = 4
# plane distances below this fraction of the pair's size snap to zero
_REL_EPS = 1e-12


def _cross2(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def _segments_meet(a, b, c, d):
    o1, o2 = _cross2(a, b, c), _cross2(a, b, d)
    o3, o4 = _cross2(c, d, a), _cross2(c, d, b)
    hit = (o1 * o2 <= 0) & (o3 * o4 <= 0)
    collinear = (o1 == 0) & (o2 == 0)
    if collinear.any():
        lo1, hi1 = np.minimum(a, b), np.maximum(a, b)
        lo2, hi2 = np.minimum(c, d), np.maximum(c, d)
        boxes = np.all((lo1 <= hi2) & (lo2 <= hi1), axis=-1)
        hit = np.where(collinear, boxes, hit)
    return hit


def _inside2(p, t):
    s0 = _cross2(t[:, 0], t[:, 1], p)
    s1 = _cross2(t[:, 1], t[:, 2], p)
    s2 = _cross2(t[:, 2], t[:, 0], p)
    return ((s0 >= 0) & (s1 >= 0) & (s2 >= 0)) | ((s0 <= 0) & (s1 <= 0) & (s2 <= 0))


def _coplanar_overlap(A, B, normal):
    drop = np.abs(normal).argmax(axis=1)
    keep = np.array([[1, 2], [0, 2], [0, 1]])[drop]
    a2 = np.take_along_axis(A, keep[:, None, :], axis=2)
    b2 = np.take_along_axis(B, keep[:, None, :], axis=2)
    hit = np.zeros(len(A), dtype=bool)
    for i in range(3):
        for j in range(3):
            hit |= _segments_meet(a2[:, i], a2[:, (i + 1) % 3], b2[:, j], b2[:, (j + 1) % 3])
    hit |= _inside2(a2[:, 0], b2) | _inside2(b2[:, 0], a2)
    return hit


def _interval(p, d):
    """Span of the triangle's crossing with the other plane, projected on the line."""
    lo = np.full(len(p), np.inf)
    hi = np.full(len(p), -np.inf)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        cross = d[:, a] * d[:, b] < 0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = p[:, a] + (p[:, b] - p[:, a]) * d[:, a] / (d[:, a] - d[:, b])
        lo = np.where(cross, np.minimum(lo, t), lo)
        hi = np.where(cross, np.maximum(hi, t), hi)
    for a in range(3):
        on = d[:, a] == 0
        lo = np.where(on, np.minimum(lo, p[:, a]), lo)
        hi = np.where(on, np.maximum(hi, p[:, a]), hi)
    return lo, hi


def face_planes(tri: np.ndarray):
    """Unit normals, plane offsets and bounding extents for triangles ``(n, 3, 3)``."""
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    length = np.linalg.norm(normal, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = normal / length[:, None]
    unit[length == 0] = np.nan
    offset = np.einsum("nd,nd->n", unit, tri[:, 0])
    extent = np.ptp(tri, axis=1).max(axis=1)
    return unit, offset, extent


def _intersect_core(A, B, nA, oA, eA, nB, oB, eB) -> np.ndarray:
    out = np.zeros(len(A), dtype=bool)
    valid = ~(np.isnan(nA[:, 0]) | np.isnan(nB[:, 0]))
    idx = np.flatnonzero(valid)
    if not len(idx):
        return out
    A, B, nA, oA, nB, oB = A[idx], B[idx], nA[idx], oA[idx], nB[idx], oB[idx]
    eps = (_REL_EPS * np.maximum(eA[idx], eB[idx]))[:, None]

    du = np.einsum("nkd,nd->nk", B, nA) - oA[:, None]
    du[np.abs(du) < eps] = 0.0
    dv = np.einsum("nkd,nd->nk", A, nB) - oB[:, None]
    dv[np.abs(dv) < eps] = 0.0

    separated = np.all(du > 0, axis=1) | np.all(du < 0, axis=1) | np.all(dv > 0, axis=1) | np.all(dv < 0, axis=1)
    coplanar = np.all(du == 0, axis=1)
    hit = np.zeros(len(idx), dtype=bool)

    cp = ~separated & coplanar
    if cp.any():
        hit[cp] = _coplanar_overlap(A[cp], B[cp], nA[cp])

    gen = ~separated & ~coplanar
    if gen.any():
        line = np.cross(nA[gen], nB[gen])
        axis = np.abs(line).argmax(axis=1)[:, None, None].repeat(3, axis=1)
        pa = np.take_along_axis(A[gen], axis, axis=2)[..., 0]
        pb = np.take_along_axis(B[gen], axis, axis=2)[..., 0]
        lo1, hi1 = _interval(pa, dv[gen])
        lo2, hi2 = _interval(pb, du[gen])
        hit[gen] = np.maximum(lo1, lo2) <= np.minimum(hi1, hi2)

    out[idx] = hit
    return out


def tri_tri_intersect(A, B) -> np.ndarray:
    """Boolean per pair: do the closed triangles ``A[k]`` and ``B[k]`` intersect?

    Zero-area triangles never intersect anything.
    """
    A = np.asarray(A, dtype=float).reshape(-1, 3, 3)
    B = np.asarray(B, dtype=float).reshape(-1, 3, 3)
    return _intersect_core(A, B, *face_planes(A), *face_planes(B))


def _shares_vertex(fa, fb) -> np.ndarray:
    return np.any(fa[:, :, None] == fb[:, None, :], axis=(1, 2))


def _test_pairs(mesh: TriMesh, pairs: np.ndarray, planes=None) -> np.ndarray:
    """Subset of ``pairs`` that share no vertex and intersect."""
    if not len(pairs):
        return pairs.reshape(0, 2)
    f = mesh.faces
    pairs = pairs[~_shares_vertex(f[pairs[:, 0]], f[pairs[:, 1]])]
    tri = mesh.triangles()
    n, o, e = planes if planes is not None else face_planes(tri)
    i, j = pairs[:, 0], pairs[:, 1]
    return pairs[_intersect_core(tri[i], tri[j], n[i], o[i], e[i], n[j], o[j], e[j])]


def _sorted_pairs(pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if not len(pairs):
        return pairs
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


# margin for the exhaustive route's plane prefilter; far above the snapping
# epsilon so a prefiltered pair is one the exact predicate also rejects
_PREFILTER_MARGIN = 1e-9


def brute_force_pairs(mesh: TriMesh) -> np.ndarray:
    """Every face pair ``i < j`` without a shared vertex, tested exhaustively.

    Each row is screened against the two planes with a conservative margin;
    survivors go through the same exact predicate the BVH route uses.
    """
    tri = mesh.triangles()
    n_f = len(tri)
    if n_f < 2:
        return np.zeros((0, 2), dtype=np.int64)
    planes = face_planes(tri)
    unit, off, ext = planes
    tau = _PREFILTER_MARGIN * ext
    found = []
    with np.errstate(invalid="ignore"):
        for i in range(n_f - 1):
            rest = tri[i + 1:]
            t = np.maximum(tau[i], tau[i + 1:])
            du = rest @ unit[i] - off[i]
            sep = np.all(du > t[:, None], axis=1) | np.all(du < -t[:, None], axis=1)
            js = i + 1 + np.flatnonzero(~sep)
            if not len(js):
                continue
            dv = unit[js] @ tri[i].T - off[js, None]
            t = t[js - i - 1, None]
            sep = np.all(dv > t, axis=1) | np.all(dv < -t, axis=1)
            js = js[~sep]
            if len(js):
                found.append(np.stack([np.full(len(js), i), js], axis=1))
    if not found:
        return np.zeros((0, 2), dtype=np.int64)
    return _sorted_pairs(_test_pairs(mesh, np.concatenate(found), planes))


class Bvh:
    """Axis-aligned bounding-box tree over face indices, median split, leaves of <= 4 faces."""

    def __init__(self, mesh: TriMesh, leaf_size: int = LEAF_SIZE):
        tri = mesh.triangles()
        # boxes padded so pairs the predicate accepts within its snapping
        # tolerance are never culled
        pad = (_PREFILTER_MARGIN * np.ptp(tri, axis=1).max(axis=1))[:, None] if len(tri) else 0.0
        self.face_lo = tri.min(axis=1) - pad if len(tri) else np.zeros((0, 3))
        self.face_hi = tri.max(axis=1) + pad if len(tri) else np.zeros((0, 3))
        centroid = tri.mean(axis=1) if len(tri) else np.zeros((0, 3))
        lo, hi, left, right, leaf_faces = [], [], [], [], []

        def new_node(ids):
            lo.append(self.face_lo[ids].min(axis=0))
            hi.append(self.face_hi[ids].max(axis=0))
            left.append(-1)
            right.append(-1)
            leaf_faces.append(None)
            return len(lo) - 1

        if len(tri):
            stack = [(new_node(np.arange(len(tri))), np.arange(len(tri)))]
            while stack:
                node, ids = stack.pop()
                if len(ids) <= leaf_size:
                    leaf_faces[node] = ids
                    continue
                c = centroid[ids]
                axis = int(np.ptp(c, axis=0).argmax())
                half = len(ids) // 2
                part = np.argpartition(c[:, axis], half)
                a, b = ids[part[:half]], ids[part[half:]]
                la, lb = new_node(a), new_node(b)
                left[node], right[node] = la, lb
                stack.append((la, a))
                stack.append((lb, b))

        self.lo = np.array(lo).reshape(-1, 3)
        self.hi = np.array(hi).reshape(-1, 3)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.is_leaf = self.left < 0
        self.leaf_table = np.full((len(lo), leaf_size), -1, dtype=np.int64)
        self.size = np.zeros(len(lo), dtype=np.int64)
        for node, ids in enumerate(leaf_faces):
            if ids is not None:
                self.leaf_table[node, :len(ids)] = ids
        # subtree face counts, children always have larger ids than parents
        for node in range(len(lo) - 1, -1, -1):
            if self.is_leaf[node]:
                self.size[node] = int((self.leaf_table[node] >= 0).sum())
            else:
                self.size[node] = self.size[self.left[node]] + self.size[self.right[node]]

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    def candidate_pairs(self) -> np.ndarray:
        """Face pairs ``i < j`` whose bounding boxes overlap."""
        if self.n_nodes == 0:
            return np.zeros((0, 2), dtype=np.int64)
        a = np.array([0])
        b = np.array([0])
        leaf_pairs = []
        while len(a):
            keep = np.all((self.lo[a] <= self.hi[b]) & (self.lo[b] <= self.hi[a]), axis=1)
            a, b = a[keep], b[keep]
            la, lb = self.is_leaf[a], self.is_leaf[b]
            done = la & lb
            leaf_pairs.append(np.stack([a[done], b[done]], axis=1))
            a, b, la, lb = a[~done], b[~done], la[~done], lb[~done]

            same = a == b
            s = a[same]
            na = [self.left[s], self.right[s], self.left[s]]
            nb = [self.left[s], self.right[s], self.right[s]]

            d_a, d_b = a[~same], b[~same]
            dla, dlb = la[~same], lb[~same]
            split_a = ~dla & (dlb | (self.size[d_a] >= self.size[d_b]))
            sa, sb = d_a[split_a], d_b[split_a]
            na += [self.left[sa], self.right[sa]]
            nb += [sb, sb]
            ta, tb = d_a[~split_a], d_b[~split_a]
            na += [ta, ta]
            nb += [self.left[tb], self.right[tb]]
            a, b = np.concatenate(na), np.concatenate(nb)

        lp = np.concatenate(leaf_pairs)
        fa = self.leaf_table[lp[:, 0]][:, :, None]
        fb = self.leaf_table[lp[:, 1]][:, None, :]
        fa, fb = np.broadcast_arrays(fa, fb)
        fa, fb = fa.reshape(-1), fb.reshape(-1)
        same_leaf = np.repeat(lp[:, 0] == lp[:, 1], fa.size // max(1, len(lp)))
        ok = (fa >= 0) & (fb >= 0) & (~same_leaf | (fa < fb))
        fa, fb = fa[ok], fb[ok]
        i, j = np.minimum(fa, fb), np.maximum(fa, fb)
        overlap = np.all((self.face_lo[i] <= self.face_hi[j]) & (self.face_lo[j] <= self.face_hi[i]), axis=1)
        return np.stack([i[overlap], j[overlap]], axis=1)


def bvh_pairs(mesh: TriMesh, bvh: Bvh | None = None) -> np.ndarray:
    bvh = bvh if bvh is not None else Bvh(mesh)
    return _sorted_pairs(_test_pairs(mesh, bvh.candidate_pairs()))


def intersecting_pairs(mesh: TriMesh, use_bvh: bool = True) -> int:
    """Number of face pairs without a shared vertex whose triangles intersect."""
    return len(bvh_pairs(mesh) if use_bvh else brute_force_pairs(mesh))
