import numpy as np

from gm_delaunay import delaunay, is_collinear, triangles_of

from oracles import delaunay_edges_bruteforce


def test_three_points_form_a_triangle():
    points = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    assert delaunay(points) == [(0, 1), (0, 2), (1, 2)]
    assert triangles_of(points, delaunay(points)) == [(0, 1, 2)]


def test_square_gets_sides_and_one_diagonal():
    square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    edges = delaunay(square)
    assert len(edges) == 5
    assert {(0, 1), (1, 2), (2, 3), (0, 3)} <= set(edges)
    assert len({(0, 2), (1, 3)} & set(edges)) == 1


def test_tiny_inputs():
    assert delaunay([]) == []
    assert delaunay([(0.3, 0.1)]) == []
    assert delaunay([(0.3, 0.1), (0.5, 0.9)]) == [(0, 1)]


def test_collinear_falls_back_to_path():
    points = [(2.0, 2.0), (0.0, 0.0), (3.0, 3.0), (1.0, 1.0)]
    assert is_collinear(points)
    assert delaunay(points) == [(0, 2), (0, 3), (1, 3)]


def test_matches_empty_circumcircle_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(3, 13))
        points = rng.uniform(size=(n, 2))
        edges = delaunay(points)
        assert set(edges) == delaunay_edges_bruteforce(points)
        assert len(edges) <= 3 * n - 6 or n == 3
        assert edges == sorted(edges)
        assert all(i < j for i, j in edges)


def test_thin_sets_keep_interior_edges(rng):
    for spread in (1e-2, 1e-3):
        for _ in range(100):
            n = int(rng.integers(4, 13))
            points = np.column_stack([rng.uniform(size=n), rng.uniform(0.0, spread, size=n)])
            assert set(delaunay(points)) == delaunay_edges_bruteforce(points)


def test_invariant_to_translation_and_scale(rng):
    points = rng.uniform(size=(9, 2))
    assert delaunay(points) == delaunay(points * 4.0 + np.array([10.0, -3.0]))


def test_every_point_is_connected(rng):
    for _ in range(20):
        points = rng.uniform(size=(int(rng.integers(3, 15)), 2))
        touched = {v for edge in delaunay(points) for v in edge}
        assert touched == set(range(len(points)))
