from .hull import convex_hull_2d, point_hull_distance
from .intersect import Bvh, brute_force_pairs, bvh_pairs, intersecting_pairs, tri_tri_intersect
from .mesh import (
    TriMesh,
    center_of_mass,
    connected_components,
    extract_surface,
    read_obj,
    support_footprint,
    write_obj,
)

__all__ = [
    "Bvh",
    "TriMesh",
    "brute_force_pairs",
    "bvh_pairs",
    "center_of_mass",
    "connected_components",
    "convex_hull_2d",
    "extract_surface",
    "intersecting_pairs",
    "point_hull_distance",
    "read_obj",
    "support_footprint",
    "tri_tri_intersect",
    "write_obj",
]
