from itertools import combinations

import numpy as np
import pytest

from mvdistill.errors import DegenerateHull
from mvdistill.hull import MERGE_EPS_FACTOR, affine_rank, convex_hull3


def brute_force_extremes(pts: np.ndarray) -> np.ndarray:
    """Oracle: a point is extreme iff some plane through a point triple has
    every other point strictly on one side."""
    m = len(pts)
    extreme = set()
    for a, b, c in combinations(range(m), 3):
        n = np.cross(pts[b] - pts[a], pts[c] - pts[a])
        if np.linalg.norm(n) == 0.0:
            continue
        d = (pts - pts[a]) @ n
        others = np.delete(d, [a, b, c])
        if (others < 0).all() or (others > 0).all():
            extreme.update((a, b, c))
    return np.array(sorted(extreme))


def ball_points(seed: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(0, 1, size=(n, 1)) ** (1 / 3)


def test_tetrahedron():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    hull = convex_hull3(pts)
    assert list(hull.vertex_indices) == [0, 1, 2, 3]
    assert len(hull.faces) == 4


def test_cube_with_interior_point():
    cube = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float)
    pts = np.concatenate([cube, [[0.0, 0.0, 0.0]]])
    hull = convex_hull3(pts)
    assert list(hull.vertex_indices) == list(range(8))


def test_matches_brute_force_oracle():
    for seed in range(20):
        pts = ball_points(seed, 30)
        hull = convex_hull3(pts)
        assert np.array_equal(hull.vertex_indices, brute_force_extremes(pts)), seed


def test_outward_orientation_and_containment():
    for seed in (100, 101, 102):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(250, 3))
        hull = convex_hull3(pts)
        interior = pts[hull.vertex_indices].mean(axis=0)
        diameter = np.linalg.norm(pts.max(0) - pts.min(0))
        for tri in hull.faces:
            a, b, c = pts[tri]
            n = np.cross(b - a, c - a)
            n /= np.linalg.norm(n)
            assert n @ interior - n @ a < 1e-12
            assert ((pts @ n) - n @ a).max() <= MERGE_EPS_FACTOR * diameter + 1e-15


def test_euler_relation():
    for seed in (7, 8):
        pts = ball_points(seed, 120)
        hull = convex_hull3(pts)
        v = len(hull.vertex_indices)
        f = len(hull.faces)
        edges = set()
        for a, b, c in hull.faces:
            for e in ((a, b), (b, c), (c, a)):
                edges.add((min(e), max(e)))
        assert v - len(edges) + f == 2


def test_degenerate_ranks():
    with pytest.raises(DegenerateHull) as exc:
        convex_hull3(np.zeros((5, 3)))
    assert exc.value.rank == 0
    with pytest.raises(DegenerateHull) as exc:
        convex_hull3(np.outer(np.arange(6), [1.0, 2.0, -1.0]))
    assert exc.value.rank == 1
    planar = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.3, 0.4, 0]], float)
    with pytest.raises(DegenerateHull) as exc:
        convex_hull3(planar)
    assert exc.value.rank == 2
    with pytest.raises(DegenerateHull):
        convex_hull3(np.array([[0, 0, 0], [1, 1, 1], [2, 0, 1]], float))  # M=3


def test_affine_rank():
    assert affine_rank(np.zeros((4, 3))) == 0
    assert affine_rank(np.outer(np.arange(4), [1.0, 0, 0])) == 1
    assert affine_rank(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)) == 2
    assert affine_rank(np.eye(3)) == 2
    assert affine_rank(np.concatenate([np.eye(3), [[5, 5, 5]]])) == 3


def test_duplicate_points_single_vertex():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 0]], float)
    hull = convex_hull3(pts)
    # exactly one of the duplicates is reported; hull is still the tetrahedron
    verts = set(hull.vertex_indices.tolist())
    assert {0, 2, 3} <= verts
    assert len(verts & {1, 4}) == 1


def test_sphere_all_vertices():
    rng = np.random.default_rng(42)
    v = rng.normal(size=(200, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    hull = convex_hull3(v)
    assert len(hull.vertex_indices) == 200


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        convex_hull3(np.zeros((4, 2)))
    bad = np.ones((5, 3))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        convex_hull3(bad)
