"""Brute-force reference implementations used only by the tests.

Written against plain Python containers so they share no code with the
modules under test.
"""

from itertools import combinations, permutations

import numpy as np


def partial_injections(n1, n2, complete=False):
    """Every matching as a sorted tuple of (i, s) pairs."""
    if complete:
        if n1 != n2:
            return
        for perm in permutations(range(n2)):
            yield tuple((i, perm[i]) for i in range(n1))
        return
    for k in range(min(n1, n2) + 1):
        for rows in combinations(range(n1), k):
            for cols in permutations(range(n2), k):
                yield tuple(sorted(zip(rows, cols)))


def qap_value(unary, pairwise, pairs):
    active = set(pairs)
    total = sum(unary[i][s] for i, s in pairs)
    for ((i, j), (s, l)), cost in pairwise.items():
        if (i, s) in active and (j, l) in active:
            total += cost
    return total


def brute_qap(unary, pairwise, complete, tol=1e-9):
    """(best value, lexicographically smallest optimal pair tuple)."""
    unary = np.asarray(unary, dtype=float)
    n1, n2 = unary.shape
    best_value, best_pairs = None, None
    for pairs in partial_injections(n1, n2, complete):
        value = qap_value(unary, pairwise, pairs)
        if best_value is None or value < best_value - tol or (abs(value - best_value) <= tol and pairs < best_pairs):
            best_value, best_pairs = value, pairs
    return best_value, best_pairs


def permutation_minimum(cost):
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in permutations(range(n)))


def triple_count(x12, x23, x31, n1, n2, n3):
    """Number of (i, s, k) with exactly two of the three indicators set."""
    x12, x23, x31 = set(x12), set(x23), set(x31)
    count = 0
    for i in range(n1):
        for s in range(n2):
            for k in range(n3):
                active = ((i, s) in x12) + ((s, k) in x23) + ((k, i) in x31)
                if active == 2:
                    count += 1
    return count


def chain_walk_consistent(matchings, d):
    """Walk every chain of distinct sets; each chain must close with a direct match.

    `matchings` maps (a, b) with a < b to a set of (point in a, point in b).
    """
    links = {}
    for (a, b), pairs in matchings.items():
        for p, q in pairs:
            links.setdefault((a, p), set()).add((b, q))
            links.setdefault((b, q), set()).add((a, p))

    def direct(u, v):
        return v in links.get(u, set())

    def walk(start, node, visited_sets, length):
        for nxt in links.get(node, ()):
            if nxt[0] in visited_sets:
                continue
            if length >= 1 and not direct(start, nxt):
                return False
            if not walk(start, nxt, visited_sets | {nxt[0]}, length + 1):
                return False
        return True

    for start in list(links):
        if not walk(start, start, {start[0]}, 0):
            return False
    return True


def circumcircle_contains(a, b, c, p, eps=1e-12):
    """Strictly inside the circumcircle of triangle abc (any orientation)."""
    ax, ay = a[0] - p[0], a[1] - p[1]
    bx, by = b[0] - p[0], b[1] - p[1]
    cx, cy = c[0] - p[0], c[1] - p[1]
    det = (
        (ax * ax + ay * ay) * (bx * cy - cx * by)
        - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay)
    )
    orient = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return det * np.sign(orient) > eps


def delaunay_edges_bruteforce(points):
    """Edges of every triangle with an empty circumcircle (general position assumed)."""
    pts = [tuple(map(float, p)) for p in points]
    n = len(pts)
    edges = set()
    for a, b, c in combinations(range(n), 3):
        orient = (pts[b][0] - pts[a][0]) * (pts[c][1] - pts[a][1]) - (pts[b][1] - pts[a][1]) * (pts[c][0] - pts[a][0])
        if abs(orient) < 1e-12:
            continue
        if any(circumcircle_contains(pts[a], pts[b], pts[c], pts[p]) for p in range(n) if p not in (a, b, c)):
            continue
        edges.update({(a, b), (a, c), (b, c)})
    return edges
