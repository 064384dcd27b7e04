import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowertail.functionals import DiscreteMeasure
from lowertail.rates import (
    T_map,
    critical_rate,
    dense_rate,
    dense_rate_bruteforce,
    dense_rate_closed_form,
    knn_tail_probability,
    knn_tail_shifted_powers,
    mu_clique,
    sparse_clique_rate,
    tilt_constraint,
    tilt_entropy,
)
from lowertail.streams import StreamKey

# (1 - sqrt(a))^2 at a = 0.1, ..., 0.9, from an independent high-precision evaluation
DENSE_RATE_TABLE = [
    0.46754446796632415,
    0.3055728090000841,
    0.20455488498966778,
    0.13508893593264826,
    0.08578643762690495,
    0.050806661517033246,
    0.026679946931848903,
    0.011145618000168243,
    0.0026334038989724007,
]


# --- sparse rate


def test_sparse_clique_rate_values():
    assert sparse_clique_rate(0.5, 1.0) == pytest.approx(0.153426409720027345, rel=1e-14)
    assert sparse_clique_rate(0.0, 2.0) == 2.0
    assert sparse_clique_rate(3.0, 2.0) == 0.0
    with pytest.raises(ValueError):
        sparse_clique_rate(0.5, 0.0)


@settings(max_examples=100)
@given(st.floats(0.01, 5), st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_sparse_rate_monotone_convex(mu, f1, f2):
    a1, a2 = sorted((f1 * mu, f2 * mu))
    I = lambda a: sparse_clique_rate(a, mu)
    assert I(a1) >= I(a2) - 1e-15
    assert I(0.5 * (a1 + a2)) <= 0.5 * (I(a1) + I(a2)) + 1e-12


@pytest.mark.parametrize("d, expected", [(1, 1.0), (2, math.pi / 2)])
def test_mu_clique_pairs(d, expected):
    est, se = mu_clique(d, 2, 200_000, StreamKey(1, f"mu{d}"))
    assert abs(est - expected) <= 3 * se


def test_mu_clique_trivial_and_errors():
    assert mu_clique(3, 1, 10, StreamKey(0)) == (1.0, 0.0)
    with pytest.raises(ValueError):
        mu_clique(1, 0, 10, StreamKey(0))


# --- dense rate


@pytest.mark.parametrize("i", range(9))
def test_dense_rate_table(i):
    a = (i + 1) / 10
    assert dense_rate_closed_form(a) == pytest.approx(DENSE_RATE_TABLE[i], rel=1e-13)
    sol = dense_rate(a)
    assert sol.converged
    assert sol.rate == pytest.approx(DENSE_RATE_TABLE[i], abs=1e-8)


def test_dense_rate_zero_above_mean():
    assert dense_rate(1.0).rate == 0.0
    assert dense_rate(5.0, k=2, s0=1.0).theta == 0.0
    assert dense_rate_closed_form(2.0) == 0.0
    with pytest.raises(ValueError):
        dense_rate(0.0)


@pytest.mark.parametrize("a, k, s0", [(0.25, 1, 0.0), (0.1, 2, 0.0), (0.3, 1, -0.5)])
def test_dense_rate_matches_brute_force(a, k, s0):
    brute = dense_rate_bruteforce(a, k, s0)
    assert brute == pytest.approx(dense_rate(a, k, s0).rate, abs=2e-4)
    assert brute == pytest.approx(dense_rate_closed_form(a, k, s0), abs=2e-4)


@settings(max_examples=100)
@given(st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_dense_rate_monotone_convex(f1, f2):
    a1, a2 = sorted((f1, f2))
    I = lambda a: dense_rate(a).rate
    assert I(a1) >= I(a2) - 1e-8
    assert I(0.5 * (a1 + a2)) <= 0.5 * (I(a1) + I(a2)) + 1e-8


@settings(max_examples=100)
@given(st.floats(0.01, 0.9), st.floats(0, 50), st.sampled_from([1, 2, 3]), st.floats(-1, 1))
def test_tilt_optimal_among_feasible_tilts(a, theta, k, s0):
    # every feasible tilted measure has at least the optimal entropy
    sol = dense_rate(a * tilt_constraint(0, k, s0), k, s0)
    if tilt_constraint(theta, k, s0) <= sol.constraint_value:
        assert tilt_entropy(theta, k, s0) >= sol.rate - 1e-9


def test_critical_rate_not_evaluated():
    with pytest.raises(NotImplementedError):
        critical_rate()


# --- T maps


def test_T_map_examples():
    m = DiscreteMeasure(np.array([1.0, 3.0]), np.array([0.5, 0.25]))
    assert T_map(m) == pytest.approx(1.25)
    assert T_map(m, "dense", s0=1.0) == pytest.approx(0.5)
    assert T_map(m, "dense_truncated", s0=1.0, M=1.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        T_map(m, "dense", s0=2.0)
    with pytest.raises(ValueError):
        T_map(m, "other")


@settings(max_examples=50)
@given(
    st.lists(st.floats(0, 10), min_size=1, max_size=10),
    st.lists(st.floats(0, 10), min_size=1, max_size=10),
    st.floats(0, 3),
    st.floats(0, 3),
)
def test_T_map_linear(x, y, alpha, beta):
    x, y = np.array(x), np.array(y)
    mx = DiscreteMeasure(x, np.ones_like(x))
    my = DiscreteMeasure(y, np.ones_like(y))
    mix = DiscreteMeasure(np.concatenate([x, y]), np.concatenate([np.full_like(x, alpha), np.full_like(y, beta)]))
    for variant in ("sparse", "dense", "dense_truncated"):
        lhs = T_map(mix, variant, 0.0, 2.0)
        rhs = alpha * T_map(mx, variant, 0.0, 2.0) + beta * T_map(my, variant, 0.0, 2.0)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


# --- kNN tail


def test_knn_tail_values():
    assert knn_tail_probability(2.0, 3) == pytest.approx(0.676676416183063459, rel=1e-14)
    assert knn_tail_probability(1.0, 1) == pytest.approx(math.exp(-1))
    assert knn_tail_shifted_powers(2.0, 3) == pytest.approx(math.exp(-2) * (1 / 2 + 1 + 2 / 2), rel=1e-14)
    with pytest.raises(ValueError):
        knn_tail_probability(0.0, 1)


@pytest.mark.parametrize("a, k", [(0.5, 1), (3.0, 4), (10.0, 7)])
def test_knn_tail_is_poisson_cdf(a, k):
    from scipy import stats

    assert knn_tail_probability(a, k) == pytest.approx(stats.poisson.cdf(k - 1, a), rel=1e-12)
