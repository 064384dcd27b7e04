import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowertail.geometry import PointSet
from lowertail.processes import (
    GridSpec,
    bernoulli_decisions,
    poisson_count,
    resample_boxes,
    sample_critical_coupling,
    sample_poisson,
    thin,
)
from lowertail.streams import StreamKey, splitmix64


def test_splitmix64_reference_values():
    # first outputs of the reference generator seeded with 0
    state, outs = 0, []
    for _ in range(3):
        outs.append(splitmix64(state))
        state = (state + 0x9E3779B97F4A7C15) % 2**64
    assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_streams_are_addressable_and_distinct():
    k = StreamKey(42, "lane")
    a = k.at(3).rng().random(4)
    assert np.array_equal(a, StreamKey(42, "lane", 3).rng().random(4))
    assert not np.array_equal(a, k.at(4).rng().random(4))
    assert not np.array_equal(a, k.child("x").at(3).rng().random(4))
    assert not np.array_equal(a, StreamKey(43, "lane", 3).rng().random(4))


def test_poisson_zero_intensity():
    assert len(sample_poisson(0, 2, StreamKey(1))) == 0


def test_sample_poisson_deterministic():
    k = StreamKey(5, "det", 9)
    assert sample_poisson(30, 3, k) == sample_poisson(30, 3, k)


def test_poisson_mean_count():
    key = StreamKey(11, "mean")
    counts = np.array([poisson_count(50.0, key.at(i).rng()) for i in range(100_000)])
    assert abs(counts.mean() - 50) <= 3 * math.sqrt(50 / 100_000)


@pytest.mark.parametrize("mean", [0.5, 7.0, 29.9, 30.0, 120.0])
def test_poisson_count_law(mean):
    from scipy import stats

    rng = StreamKey(3, f"law{mean}").rng()
    x = np.array([poisson_count(mean, rng) for _ in range(20_000)])
    # two-sided check of the first two moments
    assert abs(x.mean() - mean) <= 4 * math.sqrt(mean / x.size)
    assert abs(x.var() - mean) <= 6 * mean * math.sqrt(2 / x.size) + 4 * math.sqrt(mean / x.size)
    assert abs(np.mean(x == 0) - stats.poisson.pmf(0, mean)) <= 4 * math.sqrt(0.25 / x.size)


def test_poisson_count_rejects_bad_mean():
    with pytest.raises(ValueError):
        poisson_count(-1.0, StreamKey(0).rng())


def test_thin_extremes_and_binomial():
    phi = sample_poisson(10_000, 1, StreamKey(1, "t"))
    assert thin(phi, 1.0, StreamKey(2)) == phi
    assert len(thin(phi, 0.0, StreamKey(2))) == 0
    base = PointSet(StreamKey(3).rng().random((10_000, 1)))
    assert abs(len(thin(base, 0.5, StreamKey(4))) - 5000) <= 3 * 50
    with pytest.raises(ValueError):
        thin(phi, 1.5, StreamKey(2))


def test_critical_coupling_structure():
    cp = sample_critical_coupling(300, 2, 4.0, StreamKey(8, "cp"))
    base = {tuple(r) for r in cp.base.coords}
    assert {tuple(r) for r in cp.thinned.coords} <= base
    assert cp.union == cp.thinned.union(cp.sprinkle)
    with pytest.raises(ValueError):
        sample_critical_coupling(10, 1, 1.0, StreamKey(0))


def test_critical_coupling_limits():
    cp = sample_critical_coupling(200, 2, 1e9, StreamKey(9))
    assert len(cp.sprinkle) == 0 and cp.thinned == cp.base
    cp0 = sample_critical_coupling(0, 2, 3.0, StreamKey(9))
    assert all(len(s) == 0 for s in (cp0.base, cp0.thinned, cp0.sprinkle, cp0.union))


def test_grid_spec_indexing():
    g = GridSpec(2, 3)
    assert g.n_boxes == 9 and g.side == pytest.approx(1 / 3)
    for j in range(9):
        assert g.index(g.cell(j)) == j
    assert g.neighbors(0) == [0, 1, 2, 3, 4, 5, 6, 7, 8]
    assert GridSpec(1, 5).neighbors(0) == [0, 1, 4]
    assert g.box_of(np.array([[0.0, 0.0], [0.5, 0.99], [0.999, 0.34]])).tolist() == [0, 5, 7]
    with pytest.raises(ValueError):
        GridSpec(2, 0)


def test_resample_boxes_examples():
    g = GridSpec(2, 4)
    P = sample_poisson(200, 2, StreamKey(1, "P"))
    Q = sample_poisson(200, 2, StreamKey(1, "Q"))
    assert resample_boxes(P, Q, set(), g) == P
    full = resample_boxes(P, Q, set(range(16)), g)
    assert sorted(map(tuple, full.coords)) == sorted(map(tuple, Q.coords))
    half = set(range(0, 16, 2))
    out = resample_boxes(P, Q, half, g)
    ob, pb, qb = g.box_of(out.coords), g.box_of(P.coords), g.box_of(Q.coords)
    for b in range(16):
        src = Q if b in half else P
        sb = qb if b in half else pb
        assert np.array_equal(out.coords[ob == b], src.coords[sb == b])
    with pytest.raises(ValueError):
        resample_boxes(P, Q, {16}, g)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_unreplaced_boxes_bit_identical(seed, eps):
    g = GridSpec(1, 6)
    P = sample_poisson(60, 1, StreamKey(seed, "P"))
    Q = sample_poisson(60, 1, StreamKey(seed, "Q"))
    boxes = bernoulli_decisions(g, eps, StreamKey(seed, "b"))
    out = resample_boxes(P, Q, boxes, g)
    for b in set(range(6)) - boxes:
        assert np.array_equal(out.coords[g.box_of(out.coords) == b], P.coords[g.box_of(P.coords) == b])
