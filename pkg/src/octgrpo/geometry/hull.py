"""2-D convex hull (monotone chain) and signed point-to-hull distance."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> np.ndarray:
    """Counter-clockwise hull vertices with collinear points dropped.

    Degenerate inputs give a single point or a two-point segment.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not len(pts):
        raise ShapeError("convex hull of an empty point set")
    pts = sorted(set(map(tuple, pts.tolist())))
    if len(pts) <= 2:
        return np.array(pts)

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return np.array(hull)


def _segment_distance(p, a, b) -> float:
    ab = b - a
    denom = ab @ ab
    t = 0.0 if denom == 0 else min(1.0, max(0.0, ((p - a) @ ab) / denom))
    return float(np.hypot(*(p - (a + t * ab))))


def point_hull_distance(p, hull) -> float:
    """Distance from ``p`` to the hull boundary, negative inside.

    Point and segment hulls have no interior, so the result is never negative.
    """
    p = np.asarray(p, dtype=float)
    h = np.asarray(hull, dtype=float).reshape(-1, 2)
    if len(h) == 1:
        return float(np.hypot(*(p - h[0])))
    if len(h) == 2:
        return _segment_distance(p, h[0], h[1])
    edges = zip(h, np.roll(h, -1, axis=0))
    dist = np.inf
    inside = True
    for a, b in edges:
        dist = min(dist, _segment_distance(p, a, b))
        if _cross(a, b, p) < 0:
            inside = False
    return -dist if inside else dist
