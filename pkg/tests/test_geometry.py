import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from octgrpo.errors import FormatError, ShapeError
from octgrpo.geometry import (
    Bvh,
    TriMesh,
    brute_force_pairs,
    bvh_pairs,
    center_of_mass,
    connected_components,
    convex_hull_2d,
    extract_surface,
    intersecting_pairs,
    point_hull_distance,
    read_obj,
    support_footprint,
    tri_tri_intersect,
    write_obj,
)
from octgrpo.shapes import ShapeSpec, gen_primitive
from octgrpo.voxel import VoxelGrid

# -- independent oracles -------------------------------------------------------


def exposed_face_count(occ):
    n = 0
    for x, y, z in zip(*np.nonzero(occ)):
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            q = (x + d[0], y + d[1], z + d[2])
            inside = all(0 <= q[i] < occ.shape[i] for i in range(3))
            if not inside or not occ[q]:
                n += 1
    return n


def hull_oracle(pts):
    """Vertices of the hull: endpoints of directed edges with every point on the left."""
    verts = set()
    n = len(pts)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            a, b = pts[i], pts[j]
            cr = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
            if np.all(cr >= 0):
                verts.update((i, j))
    return verts


def ray_cast_inside(p, poly):
    inside = False
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        if (a[1] > p[1]) != (b[1] > p[1]):
            x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if p[0] < x:
                inside = not inside
    return inside


def segment_hits_triangle(p, q, tri):
    """Moller-Trumbore on the closed segment pq."""
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    d = q - p
    h = np.cross(d, e2)
    a = e1 @ h
    if abs(a) < 1e-14:
        return False
    f = 1 / a
    s = p - tri[0]
    u = f * (s @ h)
    if u < 0 or u > 1:
        return False
    qv = np.cross(s, e1)
    v = f * (d @ qv)
    if v < 0 or u + v > 1:
        return False
    t = f * (e2 @ qv)
    return 0 <= t <= 1


def tri_oracle(A, B):
    for T, U in ((A, B), (B, A)):
        for i in range(3):
            if segment_hits_triangle(T[i], T[(i + 1) % 3], U):
                return True
    return False


def pair_oracle(mesh):
    tris = mesh.triangles()
    out = []
    for i in range(len(tris)):
        for j in range(i + 1, len(tris)):
            if set(mesh.faces[i]) & set(mesh.faces[j]):
                continue
            if tri_oracle(tris[i], tris[j]):
                out.append((i, j))
    return out


def soup(rng, n, spread=1.0, size=0.3):
    centers = rng.uniform(0, spread, (n, 1, 3))
    verts = (centers + rng.uniform(-size, size, (n, 3, 3))).reshape(-1, 3)
    return TriMesh(verts, np.arange(3 * n).reshape(n, 3))


def unit_cube_mesh(offset=(0, 0, 0)):
    g = VoxelGrid(np.pad(np.ones((1, 1, 1), bool), ((0, 3), (0, 3), (0, 3))), cell_size=1.0)
    m = extract_surface(g)
    return TriMesh(m.vertices + np.asarray(offset, float), m.faces)


def tetra(offset):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float) + offset
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriMesh(v, f)


# -- surface extraction --------------------------------------------------------


class TestSurface:
    def test_single_voxel(self):
        m = unit_cube_mesh()
        assert m.n_faces == 12 and len(m.vertices) == 8

    def test_bar(self):
        occ = np.zeros((4, 4, 4), bool)
        occ[0:2, 0, 0] = True
        assert extract_surface(VoxelGrid(occ)).n_faces == 20

    def test_empty(self):
        assert extract_surface(VoxelGrid.empty((4, 4, 4))).n_faces == 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_face_count_matches_enumeration(self, seed):
        occ = np.random.default_rng(seed).random((8, 8, 4)) < 0.4
        assert extract_surface(VoxelGrid(occ)).n_faces == 2 * exposed_face_count(occ)

    def test_outward_winding_gives_positive_volume(self):
        m = extract_surface(gen_primitive(ShapeSpec("l_bracket"), (32, 32, 32)))
        t = m.triangles()
        vol = np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6
        g = gen_primitive(ShapeSpec("l_bracket"), (32, 32, 32))
        assert vol == pytest.approx(g.count * g.cell_size**3)

    def test_clean_surface_has_no_self_intersections(self):
        m = extract_surface(gen_primitive(ShapeSpec("table"), (64, 64, 32)))
        assert intersecting_pairs(m) == 0


# -- mass and support --------------------------------------------------------


class TestMassSupport:
    def test_cube_grid_center(self):
        occ = np.zeros((8, 8, 8), bool)
        occ[2:6, 2:6, 0:4] = True
        g = VoxelGrid(occ, cell_size=1.0)
        assert np.allclose(center_of_mass(g), [4, 4, 2])

    def test_l_bracket(self):
        g = gen_primitive(ShapeSpec("l_bracket", {"arm": 24, "width": 16, "thick": 8, "ox": 10, "oy": 20}))
        g1 = np.array([10 + 12, 20 + 8, 4])
        g2 = np.array([10 + 4, 20 + 8, 8 + 12])
        assert np.allclose(center_of_mass(g), (g1 + g2) / 2 * g.cell_size)

    def test_mesh_tetra_method(self):
        assert np.allclose(center_of_mass(unit_cube_mesh()), [0.5, 0.5, 0.5])
        assert np.allclose(center_of_mass(unit_cube_mesh((5, -2, 3))), [5.5, -1.5, 3.5])

    def test_empty_raises(self):
        with pytest.raises(ShapeError, match="empty"):
            center_of_mass(VoxelGrid.empty((4, 4, 4)))

    def test_footprint_cube(self):
        fp = support_footprint(unit_cube_mesh())
        assert {tuple(p) for p in fp} == {(0, 0), (1, 0), (0, 1), (1, 1)}

    def test_footprint_sphere_band(self):
        g = gen_primitive(ShapeSpec("sphere", {"radius": 12}), (32, 32, 32))
        m = extract_surface(g)
        fp = support_footprint(m)
        z = m.vertices[:, 2]
        band = z <= z.min() + 0.02 * (z.max() - z.min())
        assert len(fp) == band.sum() > 0

    def test_footprint_flat(self):
        m = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), np.array([[0, 1, 2]]))
        assert len(support_footprint(m)) == 3


# -- hull --------------------------------------------------------------------


class TestHull:
    def test_square_with_interior(self, rng):
        pts = np.concatenate([[[0, 0], [1, 0], [1, 1], [0, 1]], rng.uniform(0.1, 0.9, (20, 2))])
        h = convex_hull_2d(pts)
        assert {tuple(p) for p in h} == {(0, 0), (1, 0), (1, 1), (0, 1)}
        area = 0.5 * np.sum(h[:, 0] * np.roll(h[:, 1], -1) - np.roll(h[:, 0], -1) * h[:, 1])
        assert area > 0  # counter-clockwise

    def test_collinear(self):
        h = convex_hull_2d(np.array([[0, 0], [1, 1], [2, 2], [3, 3.0]]))
        assert len(h) == 2
        assert {tuple(p) for p in h} == {(0, 0), (3, 3)}

    def test_single_and_empty(self):
        assert len(convex_hull_2d(np.array([[2.0, 3.0]]))) == 1
        with pytest.raises(ShapeError, match="empty"):
            convex_hull_2d(np.zeros((0, 2)))

    def test_random_vs_brute_force(self, rng):
        pts = rng.standard_normal((1000, 2))
        h = convex_hull_2d(pts)
        expect = {tuple(pts[i]) for i in hull_oracle(pts)}
        assert {tuple(p) for p in h} == expect

    def test_distances(self):
        sq = convex_hull_2d(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]))
        assert point_hull_distance((0.5, 0.5), sq) == pytest.approx(-0.5)
        assert point_hull_distance((0.5, 0.0), sq) == pytest.approx(0.0)
        assert point_hull_distance((3, 0), sq) == pytest.approx(2.0)

    def test_degenerate_hulls_never_inside(self):
        seg = convex_hull_2d(np.array([[0, 0], [2, 0.0]]))
        assert point_hull_distance((1, 0), seg) == 0.0
        assert point_hull_distance((1, 1), seg) == pytest.approx(1.0)
        pt = convex_hull_2d(np.array([[1, 1.0]]))
        assert point_hull_distance((4, 5), pt) == pytest.approx(5.0)

    @settings(max_examples=100)
    @given(st.integers(0, 2**31), st.floats(-2, 2), st.floats(-2, 2))
    def test_sign_matches_ray_cast(self, seed, x, y):
        pts = np.random.default_rng(seed).standard_normal((12, 2))
        h = convex_hull_2d(pts)
        d = point_hull_distance((x, y), h)
        assume(abs(d) > 1e-9)
        assert (d < 0) == ray_cast_inside((x, y), h)


# -- components --------------------------------------------------------------


class TestComponents:
    def test_single(self):
        assert connected_components(unit_cube_mesh()) == [12]

    def test_two_disjoint(self):
        assert connected_components(unit_cube_mesh() + unit_cube_mesh((3, 0, 0))) == [12, 12]

    def test_vertex_touching_is_two(self):
        occ = np.zeros((4, 4, 4), bool)
        occ[0, 0, 0] = occ[1, 1, 1] = True
        assert connected_components(extract_surface(VoxelGrid(occ))) == [12, 12]

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_counts_sum(self, seed):
        occ = np.random.default_rng(seed).random((8, 4, 4)) < 0.3
        m = extract_surface(VoxelGrid(occ))
        comps = connected_components(m)
        assert sum(comps) == m.n_faces
        assert comps == sorted(comps, reverse=True)


# -- intersections -----------------------------------------------------------


class TestIntersections:
    def test_basic_cases(self):
        A = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]])
        B = np.array([[0.2, 0.2, -1], [0.2, 0.2, 1], [0.3, 0.5, 0.0]])
        C = B + [5, 0, 0]
        assert tri_tri_intersect(A, B)
        assert not tri_tri_intersect(A, C)
        coplanar = np.array([[0.2, 0.2, 0], [2, 0.2, 0], [0.2, 2, 0.0]])
        assert tri_tri_intersect(A, coplanar)

    def test_interpenetrating_tetrahedra(self):
        m = tetra((0, 0, 0)) + tetra((0.25, 0.25, 0.25))
        oracle = pair_oracle(m)
        assert len(oracle) >= 1
        assert intersecting_pairs(m, use_bvh=False) == len(oracle)
        assert intersecting_pairs(m, use_bvh=True) == len(oracle)
        assert [tuple(p) for p in brute_force_pairs(m)] == oracle

    def test_shared_vertex_excluded(self):
        m = unit_cube_mesh()
        assert intersecting_pairs(m, use_bvh=False) == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_soup_vs_independent_oracle(self, seed):
        m = soup(np.random.default_rng(seed), 60)
        assert [tuple(p) for p in brute_force_pairs(m)] == pair_oracle(m)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 120))
    def test_bvh_equals_brute(self, seed, n):
        m = soup(np.random.default_rng(seed), n)
        assert np.array_equal(bvh_pairs(m), brute_force_pairs(m))

    def test_bvh_structure(self, rng):
        m = soup(rng, 200)
        bvh = Bvh(m)
        leaves = [bvh.leaf_table[i] for i in range(bvh.n_nodes) if bvh.is_leaf[i]]
        ids = np.concatenate([np.asarray(l)[np.asarray(l) >= 0] for l in leaves])
        assert sorted(ids.tolist()) == list(range(m.n_faces))
        assert all((np.asarray(l) >= 0).sum() <= 4 for l in leaves)
        for i in range(bvh.n_nodes):
            if not bvh.is_leaf[i]:
                for c in (bvh.left[i], bvh.right[i]):
                    assert np.all(bvh.lo[i] <= bvh.lo[c]) and np.all(bvh.hi[c] <= bvh.hi[i])


# -- OBJ ---------------------------------------------------------------------


class TestObj:
    def test_roundtrip(self, tmp_path):
        m = unit_cube_mesh()
        write_obj(tmp_path / "c.obj", m)
        back = read_obj(tmp_path / "c.obj")
        assert np.allclose(back.vertices, m.vertices) and np.array_equal(back.faces, m.faces)

    def test_fan_triangulation(self, tmp_path):
        (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
        m = read_obj(tmp_path / "q.obj")
        assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_bad_index(self, tmp_path):
        (tmp_path / "b.obj").write_text("v 0 0 0\nf 1 2 3\n")
        with pytest.raises(FormatError):
            read_obj(tmp_path / "b.obj")
