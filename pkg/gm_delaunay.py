"""
Delaunay edge structure for keypoint sets.

Bowyer-Watson insertion with a symbolic super-triangle: a single vertex at
infinity closes every hull edge into a "ghost" triangle, so no finite far-away
coordinates enter the predicates and thin point sets keep all their edges.
"""

from __future__ import annotations

import math
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from utils import get_logger

logger = get_logger(__name__)

DEGENERACY_EPS = 1e-12

Edge = Tuple[int, int]
Triangle = Tuple[int, int, int]


def _orient(pts: np.ndarray, a: int, b: int, c: int) -> float:
    (ax, ay), (bx, by), (cx, cy) = pts[a], pts[b], pts[c]
    return math.fsum([(bx - ax) * (cy - ay), -(by - ay) * (cx - ax)])


def _in_circumcircle(pts: np.ndarray, tri: Triangle, p: int) -> bool:
    """Strictly inside the circumcircle of the counter-clockwise triangle `tri`."""
    ghost = len(pts)
    if ghost in tri:
        return _in_ghost_circle(pts, _ghost_last(tri), p)
    dx, dy = pts[p]
    rows = []
    for v in tri:
        ex, ey = pts[v][0] - dx, pts[v][1] - dy
        rows.append((ex, ey, math.fsum([ex * ex, ey * ey])))
    (a1, a2, a3), (b1, b2, b3), (c1, c2, c3) = rows
    det = math.fsum(
        [
            a1 * b2 * c3,
            a2 * b3 * c1,
            a3 * b1 * c2,
            -a3 * b2 * c1,
            -a2 * b1 * c3,
            -a1 * b3 * c2,
        ]
    )
    return det > DEGENERACY_EPS


def _ghost_last(tri: Triangle) -> Triangle:
    k = tri.index(max(tri))
    return (tri[(k + 1) % 3], tri[(k + 2) % 3], tri[k])


def _in_ghost_circle(pts: np.ndarray, tri: Triangle, p: int) -> bool:
    """Limit of the circumcircle of (a, b, infinity): the open half-plane left of a->b plus the open segment ab."""
    a, b, _ = tri
    side = _orient(pts, a, b, p)
    if side > DEGENERACY_EPS:
        return True
    if side < -DEGENERACY_EPS:
        return False
    return float(np.dot(pts[p] - pts[a], pts[p] - pts[b])) < 0.0


def _seed_triangle(pts: np.ndarray) -> Triangle:
    far = int(np.argmax(np.linalg.norm(pts - pts[0], axis=1)))
    third = int(np.argmax([abs(_orient(pts, 0, far, k)) for k in range(len(pts))]))
    if _orient(pts, 0, far, third) < 0:
        return (0, third, far)
    return (0, far, third)


def _path_graph(pts: np.ndarray) -> List[Edge]:
    order = sorted(range(len(pts)), key=lambda k: (pts[k][0], pts[k][1]))
    return sorted((min(a, b), max(a, b)) for a, b in zip(order, order[1:]))


def _normalized(points: Sequence[Sequence[float]]) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max())
    return (pts - lo) / (extent if extent > 0 else 1.0)


def is_collinear(points: Sequence[Sequence[float]]) -> bool:
    pts = _normalized(points)
    if len(pts) < 3:
        return True
    far = int(np.argmax(np.linalg.norm(pts - pts[0], axis=1)))
    return all(abs(_orient(pts, 0, far, k)) <= DEGENERACY_EPS for k in range(len(pts)))


def delaunay(points: Sequence[Sequence[float]]) -> List[Edge]:
    """Undirected, deduplicated Delaunay edges as sorted (i < j) pairs.

    Collinear input has no triangulation and falls back to a path graph in
    coordinate order.
    """
    n = len(points)
    if n < 2:
        return []
    if n == 2:
        return [(0, 1)]
    if is_collinear(points):
        logger.warning("Delaunay input of %d points is collinear; using a path graph", n)
        return _path_graph(_normalized(points))

    pts = _normalized(points)
    ghost = n
    seed = _seed_triangle(pts)
    a, b, c = seed
    triangles: Set[Triangle] = {seed, (b, a, ghost), (c, b, ghost), (a, c, ghost)}

    for p in range(n):
        if p in seed:
            continue
        bad = [tri for tri in triangles if _in_circumcircle(pts, tri, p)]
        if not bad:
            logger.debug("point %d duplicates a vertex; left out of the triangulation", p)
            continue
        edge_count: Dict[Edge, int] = {}
        for a, b, c in bad:
            for u, v in ((a, b), (b, c), (c, a)):
                key = (min(u, v), max(u, v))
                edge_count[key] = edge_count.get(key, 0) + 1
        for tri in bad:
            triangles.discard(tri)
        for a, b, c in bad:
            for u, v in ((a, b), (b, c), (c, a)):
                if edge_count[(min(u, v), max(u, v))] == 1:
                    triangles.add((u, v, p))

    edges: Set[Edge] = set()
    for tri in triangles:
        if ghost in tri:
            continue
        a, b, c = tri
        for u, v in ((a, b), (b, c), (c, a)):
            edges.add((min(u, v), max(u, v)))

    return sorted(edges)


def triangles_of(points: Sequence[Sequence[float]], edges: Sequence[Edge]) -> List[Triangle]:
    """Edge triples forming non-degenerate triangles (used to inspect a triangulation)."""
    pts = _normalized(points)
    adjacency: Dict[int, Set[int]] = {}
    for u, v in edges:
        adjacency.setdefault(u, set()).add(v)
        adjacency.setdefault(v, set()).add(u)
    found = []
    for u, v in edges:
        for w in sorted(adjacency[u] & adjacency[v]):
            if w > v and abs(_orient(pts, u, v, w)) > DEGENERACY_EPS:
                found.append((u, v, w))
    return found
