import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtetree.discretization import (
    INTERIOR,
    build_time_grid,
    build_uniform_grid,
    chord_length,
    grid_from_points,
    ray_exit_distance,
)


def test_half_cell_grid_points():
    g = build_uniform_grid(0.5)
    assert g.M == 4
    np.testing.assert_allclose(
        g.points, [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])


@pytest.mark.parametrize("ell, M", [(1 / 48, 2304), (1 / 24, 576)])
def test_point_counts(ell, M):
    assert build_uniform_grid(ell).M == M


@pytest.mark.parametrize("ell", [0.0, -0.1, 0.6, float("nan")])
def test_rejects_bad_cell_size(ell):
    with pytest.raises(ValueError):
        build_uniform_grid(ell)


def test_non_integer_reciprocal_names_nearest():
    with pytest.raises(ValueError, match=r"1/3"):
        build_uniform_grid(0.3)


@pytest.mark.parametrize("m", [2, 5, 24, 48])
def test_grid_invariants(m):
    g = build_uniform_grid(1.0 / m)
    i, j = g.ij(np.arange(g.M))
    np.testing.assert_allclose(g.points[:, 0], (i + 0.5) * g.cell_size)
    np.testing.assert_allclose(g.points[:, 1], (j + 0.5) * g.cell_size)
    assert abs(g.M * g.cell_area - 1.0) < 1e-12
    assert np.all(g.cell_kind == INTERIOR)
    assert np.array_equal(g.index(i, j), np.arange(g.M))
    assert np.array_equal(g.locate(g.points), np.arange(g.M))


def test_distinct_points_are_a_cell_apart():
    g = build_uniform_grid(1 / 12)
    d = np.hypot(*(g.points[:, None, :] - g.points[None, :, :]).transpose(2, 0, 1))
    off = d[~np.eye(g.M, dtype=bool)]
    assert off.min() >= g.cell_size * (1 - 1e-12)


def test_grid_from_points():
    assert grid_from_points(2304).m == 48
    with pytest.raises(ValueError):
        grid_from_points(2300)


def test_time_grid_examples():
    tg = build_time_grid(1.0, 1 / 48)
    assert tg.N == 48
    assert tg.time(48) == 48 * (1 / 48)
    assert abs(tg.nodes[-1] - 1.0) < 1e-15
    tg = build_time_grid(1.0, 1.0)
    assert tg.N == 1 and list(tg.nodes) == [0.0, 1.0]
    with pytest.raises(ValueError):
        build_time_grid(1.0, 0.3)


def test_time_nodes_are_not_accumulated():
    tg = build_time_grid(1.0, 1 / 168)
    assert np.array_equal(tg.nodes, np.arange(169) * (1 / 168))


def test_ray_exit_examples():
    assert ray_exit_distance((0.5, 0.5), (1.0, 0.0)) == pytest.approx(0.5)
    s = math.sqrt(2) / 2
    assert ray_exit_distance((0.5, 0.5), (s, s)) == pytest.approx(s)
    # on the left face, looking back along -v = +x crosses the whole square
    assert ray_exit_distance((0.0, 0.5), (-1.0, 0.0)) == pytest.approx(1.0)
    assert ray_exit_distance((0.0, 0.5), (1.0, 0.0)) == 0.0


def test_ray_exit_rejects_bad_input():
    with pytest.raises(ValueError):
        ray_exit_distance((1.2, 0.5), (1.0, 0.0))
    with pytest.raises(ValueError):
        ray_exit_distance((0.5, 0.5), (1.0, 1.0))


@settings(max_examples=200, deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0.001, 0.999), st.floats(0, 2 * math.pi))
def test_chord_is_sum_of_exit_distances(x, y, angle):
    v = np.array([math.cos(angle), math.sin(angle)])
    p = np.array([x, y])
    chord = chord_length(p, v)
    # independent chord: clip the full line against the box
    lo, hi = -np.inf, np.inf
    for d in range(2):
        if abs(v[d]) > 1e-15:
            a, b = sorted([(0 - p[d]) / v[d], (1 - p[d]) / v[d]])
            lo, hi = max(lo, a), min(hi, b)
    assert 0 <= ray_exit_distance(p, v) <= math.sqrt(2) + 1e-12
    assert chord == pytest.approx(min(hi - lo, 2 * math.sqrt(2)), abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 8])
def test_odd_refinement_maps_centroids_exactly(k):
    r = 2 * k - 1
    coarse = build_uniform_grid(1 / 24)
    fine = build_uniform_grid(1 / (24 * r))
    i = np.arange(24)
    fi = r * i + (k - 1)
    np.testing.assert_allclose(fine.points[fi, 0], coarse.points[i, 0], rtol=0, atol=1e-15)
