import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowertail import _fallback, kernels
from lowertail.geometry import (
    PointSet,
    SpatialIndex,
    TorusPoint,
    connected_components,
    contact_distance,
    diameter,
    knn_radius,
    points_in_ball,
    torus_distance,
    unit_ball_volume,
)

import oracles

unit = st.floats(0.0, 1.0, allow_nan=False, exclude_max=True)


def random_set(rng, N, d):
    return PointSet(rng.random((N, d)), d)


# --- torus_distance


@pytest.mark.parametrize(
    "x, y, expected",
    [
        ((0.9,), (0.1,), 0.2),
        ((0.3, 0.7), (0.3, 0.7), 0.0),
        ((0.95, 0.5), (0.05, 0.5), 0.1),
    ],
)
def test_torus_distance_examples(x, y, expected):
    assert torus_distance(x, y) == pytest.approx(expected, abs=1e-15)


def test_torus_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        torus_distance((0.1, 0.2), (0.3,))


def test_torus_point_canonicalizes():
    assert TorusPoint((1.25, -0.25)).coords == (0.25, 0.75)
    assert TorusPoint((-1e-20,)).coords == (0.0,)


@settings(max_examples=200)
@given(st.lists(unit, min_size=3, max_size=3), st.lists(unit, min_size=3, max_size=3), st.lists(unit, min_size=3, max_size=3))
def test_metric_axioms(x, y, z):
    dxy, dyx = torus_distance(x, y), torus_distance(y, x)
    assert dxy == dyx
    assert 0.0 <= dxy <= math.sqrt(3) / 2 + 1e-15
    assert dxy <= torus_distance(x, z) + torus_distance(z, y) + 1e-12
    assert dxy <= math.dist(x, y) + 1e-15


def test_metric_axioms_bulk():
    rng = np.random.default_rng(7)
    for d in (1, 2, 3):
        t = rng.random((10_000, 3, d))
        def dist(a, b):
            u = np.abs(a - b)
            u = np.minimum(u, 1 - u)
            return np.sqrt((u * u).sum(-1))
        x, y, z = t[:, 0], t[:, 1], t[:, 2]
        assert np.array_equal(dist(x, y), dist(y, x))
        assert np.all(dist(x, y) <= dist(x, z) + dist(z, y) + 1e-12)


# --- points_in_ball


def test_ball_empty_at_radius_zero():
    phi = PointSet([[0.1, 0.1], [0.5, 0.5]])
    assert points_in_ball(SpatialIndex(phi), (0.3, 0.3), 0.0).size == 0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_ball_at_max_radius_returns_all(d):
    phi = random_set(np.random.default_rng(d), 50, d)
    idx = SpatialIndex(phi, 0.05)
    assert np.array_equal(points_in_ball(idx, np.full(d, 0.3), math.sqrt(d) / 2), np.arange(50))


def test_ball_closed():
    phi = PointSet([[0.25], [0.5]])
    assert points_in_ball(SpatialIndex(phi), (0.0,), 0.25).tolist() == [0]


@pytest.mark.parametrize("d", [1, 2, 3])
def test_ball_matches_brute_force(d):
    rng = np.random.default_rng(100 + d)
    phi = random_set(rng, 200, d)
    for cell in (None, 0.1, 0.01):
        idx = SpatialIndex(phi, cell)
        for _ in range(20):
            c = rng.random(d)
            assert np.array_equal(points_in_ball(idx, c, 0.1), oracles.ball(phi.coords, c, 0.1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.5), st.floats(0, 0.5))
def test_ball_monotone_in_radius(seed, r1, r2):
    r1, r2 = sorted((r1, r2))
    rng = np.random.default_rng(seed)
    phi = random_set(rng, 60, 2)
    idx = SpatialIndex(phi)
    c = rng.random(2)
    assert set(points_in_ball(idx, c, r1).tolist()) <= set(points_in_ball(idx, c, r2).tolist())


# --- knn_radius


def test_knn_two_points():
    x, y = (0.1, 0.2), (0.8, 0.9)
    phi = PointSet([x, y])
    assert knn_radius(x, phi, 1) == pytest.approx(torus_distance(x, y), abs=0)


def test_knn_infinite_sentinel():
    phi = PointSet([[0.4]])
    assert knn_radius((0.4,), phi, 1) == math.inf


@pytest.mark.parametrize("d", [1, 2, 3])
def test_knn_matches_sorted_distances(d):
    rng = np.random.default_rng(200 + d)
    phi = random_set(rng, 100, d)
    for i in range(0, 100, 7):
        assert knn_radius(phi.coords[i], phi, 3) == oracles.knn_radius(phi.coords, phi.coords[i], 3)


def test_knn_counts_ties():
    phi = PointSet([[0.5], [0.4], [0.6], [0.9]])
    assert knn_radius((0.5,), phi, 2) == pytest.approx(0.1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(unit, min_size=2, max_size=2), st.integers(1, 3))
def test_knn_and_contact_antitone(seed, y, k):
    rng = np.random.default_rng(seed)
    phi = random_set(rng, 30, 2)
    bigger = phi.union(PointSet([y]))
    x = rng.random(2)
    assert knn_radius(x, bigger, k) <= knn_radius(x, phi, k)
    assert contact_distance(x, bigger) <= contact_distance(x, phi)


# --- contact_distance


def test_contact_examples():
    assert contact_distance((0.3,), PointSet([[0.3]])) == 0.0
    assert contact_distance((0.3,), PointSet.empty(1)) == math.inf


@pytest.mark.parametrize("d", [1, 2, 3])
def test_contact_matches_linear_scan(d):
    rng = np.random.default_rng(300 + d)
    phi = random_set(rng, 150, d)
    for _ in range(30):
        x = rng.random(d)
        assert contact_distance(x, phi) == oracles.contact(phi.coords, x)


# --- connected_components


def test_components_two_far_points():
    comps = connected_components(PointSet([[0.1], [0.5]]), 0.1)
    assert [c.tolist() for c in comps] == [[0], [1]]


def test_components_chain():
    r = 0.04
    phi = PointSet([[0.1 + i * r / 2] for i in range(5)])
    assert len(connected_components(phi, r)) == 1


@pytest.mark.parametrize("d", [1, 2, 3])
def test_components_match_union_find(d):
    rng = np.random.default_rng(400 + d)
    phi = random_set(rng, 300, d)
    got = [c.tolist() for c in connected_components(phi, 0.05)]
    assert got == oracles.components(phi.coords, 0.05)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.2), st.floats(0.0, 0.2))
def test_components_coarsen_with_radius(seed, r1, r2):
    r1, r2 = sorted((r1, r2))
    phi = random_set(np.random.default_rng(seed), 80, 2)
    coarse = {i: c for c, comp in enumerate(connected_components(phi, r2)) for i in comp.tolist()}
    for comp in connected_components(phi, r1):
        assert len({coarse[i] for i in comp.tolist()}) == 1


# --- diameter


def test_diameter_pair_and_triangle():
    assert diameter(PointSet([[0.1, 0.1], [0.4, 0.5]])) == pytest.approx(0.5)
    s = 0.3
    tri = PointSet([[0.2, 0.2], [0.2 + s, 0.2], [0.2 + s / 2, 0.2 + s * math.sqrt(3) / 2]])
    assert diameter(tri) == pytest.approx(s)


def test_diameter_metrics_and_errors():
    phi = PointSet([[0.05], [0.95]])
    assert diameter(phi) == pytest.approx(0.1)
    assert diameter(phi, "euclidean") == pytest.approx(0.9)
    with pytest.raises(ValueError):
        diameter(PointSet([[0.5]]))


def test_diameter_matches_brute_force():
    phi = random_set(np.random.default_rng(5), 40, 3)
    assert diameter(phi) == oracles.torus_dist_matrix(phi.coords).max()


# --- PointSet I/O and misc


def test_csv_roundtrip_is_exact():
    phi = random_set(np.random.default_rng(9), 25, 3)
    text = phi.to_csv()
    assert text.splitlines()[0] == "dim=3"
    assert PointSet.from_csv("# comment\n" + text) == phi


def test_pointset_is_read_only():
    phi = PointSet([[0.1, 0.2]])
    with pytest.raises(ValueError):
        phi.coords[0, 0] = 0.5


def test_unit_ball_volume():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled extension not built")
@pytest.mark.parametrize("d", [1, 2, 3])
def test_backends_bit_identical(d):
    from lowertail import _kernels

    rng = np.random.default_rng(d)
    for N in (0, 1, 5, 300):
        coords = np.ascontiguousarray(rng.random((N, d)))
        for G in (1, 3, 17):
            oc, sc = _kernels.build_grid(coords, G), _fallback.build_grid(coords, G)
            assert all(np.array_equal(a, b) for a, b in zip(oc, sc))
            order, start = oc
            q = np.ascontiguousarray(rng.random((20, d)))
            for r in (0.0, 0.05, 0.3):
                assert np.array_equal(_kernels.ball_counts(coords, G, order, start, q, r), _fallback.ball_counts(coords, G, order, start, q, r))
                pc, ps = _kernels.pairs_within(coords, G, order, start, r), _fallback.pairs_within(coords, G, order, start, r)
                assert np.array_equal(pc[0], ps[0]) and np.array_equal(pc[1], ps[1])
                assert np.array_equal(_kernels.ball_query(coords, G, order, start, q[0], r), _fallback.ball_query(coords, G, order, start, q[0], r))
            for k in (1, 3):
                assert np.array_equal(_kernels.knn_dists(coords, G, order, start, q, k, True), _fallback.knn_dists(coords, G, order, start, q, k, True))


def test_tiny_radius_does_not_overflow_grid():
    phi = random_set(np.random.default_rng(0), 20, 2)
    assert len(connected_components(phi, 2.2e-309)) == 20
