import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowertail.estimation import (
    BoundCheck,
    EstimationResult,
    ball_count_bound,
    bound_checks_csv,
    constant_functional,
    coupling_distribution_test,
    dense_bad_box_exact,
    dense_knn_functional,
    dense_params_for_speed,
    estimate_lower_tail,
    estimates_csv,
    map_replicates,
    replicate_values,
    scaling_curve,
    sparse_edge_functional,
    sparse_params_for_speed,
    tail_from_values,
    verify_bad_box_probabilities,
    verify_ball_count_bound,
    verify_knn_tail,
    verify_large_radius_count,
    verify_sprinkle_bound,
    write_csv,
)
from lowertail.functionals import RegimeParams
from lowertail.streams import StreamKey

import oracles


def _sparse():
    return sparse_params_for_speed(10.0, 100.0, d=1, k0=2)


# --- speeds and parameters


def test_params_for_speed():
    p = _sparse()
    assert p.sparse_speed == pytest.approx(10.0)
    q = dense_params_for_speed(10.0, 2000.0)
    assert q.a_n == pytest.approx(math.log(200))
    assert q.dense_speed == pytest.approx(10.0)
    q2 = dense_params_for_speed(5.0, 1e4, d=2, k=2)
    assert q2.dense_speed == pytest.approx(5.0) and q2.a_n > 1
    with pytest.raises(ValueError):
        dense_params_for_speed(1e6, 10.0)


# --- tail estimates


def test_tail_extremes():
    p, key = _sparse(), StreamKey(1)
    f = sparse_edge_functional()
    assert estimate_lower_tail(f, p, math.inf, 100, key).p_hat == 1.0
    res = estimate_lower_tail(f, p, -1.0, 100, key)
    assert res.p_hat == 0.0 and res.normalized_log == math.inf
    with pytest.raises(ValueError):
        estimate_lower_tail(f, p, 1.0, 99, key)


def test_from_hits():
    r = EstimationResult.from_hits(25, 100, 2.0, 0.5)
    assert r.p_hat == 0.25 and r.std_err == pytest.approx(math.sqrt(0.25 * 0.75 / 100))
    assert r.normalized_log == pytest.approx(-math.log(0.25) / 2)
    assert math.copysign(1.0, EstimationResult.from_hits(10, 10, 1.0).normalized_log) == 1.0


def test_sparse_edges_agree_with_naive_simulator():
    p = _sparse()
    reps, a = 3000, 0.8
    res = estimate_lower_tail(sparse_edge_functional(), p, a, reps, StreamKey(2, "est"))
    # independent sampler: numpy Poisson count, uniform positions, all-pairs edges
    rng = np.random.default_rng(12345)
    hits = 0
    for _ in range(reps):
        pts = rng.random((rng.poisson(p.n), 1))
        hits += oracles.sparse_edges_H(pts, p.n, p.r_n, 1) <= a
    naive = hits / reps
    se = math.sqrt(res.std_err**2 + naive * (1 - naive) / reps)
    assert abs(res.p_hat - naive) <= 3 * se


def test_constant_functional_curve():
    params = [RegimeParams(n=n) for n in (10.0, 100.0, 1000.0)]
    for r in scaling_curve(constant_functional(0.0), params, 0.0, 100, StreamKey(3)):
        assert r.p_hat == 1.0 and r.normalized_log == 0.0 and not r.diagnostics["zero"]


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 3), st.floats(0, 3))
def test_tail_monotone_in_a(a1, a2):
    a1, a2 = sorted((a1, a2))
    vals = replicate_values(sparse_edge_functional(), _sparse(), 100, StreamKey(4))
    assert tail_from_values(vals, a1, 10.0).p_hat <= tail_from_values(vals, a2, 10.0).p_hat


def test_deterministic_across_threads():
    p = dense_params_for_speed(10.0, 500.0)
    f = dense_knn_functional()
    a = replicate_values(f, p, 600, StreamKey(5), threads=1)
    b = replicate_values(f, p, 600, StreamKey(5), threads=3)
    assert np.array_equal(a, b)
    assert map_replicates(lambda i: i * i, 1000, threads=4, chunk=7) == [i * i for i in range(1000)]


# --- bound checks


def test_bound_check_semantics():
    assert BoundCheck("u", 1.0, 1.0, 0.1).status == "pass"
    assert BoundCheck("u", 1.35, 1.0, 0.1).status == "warn"
    assert BoundCheck("u", 1.5, 1.0, 0.1).status == "fail"
    assert BoundCheck("l", 0.0, 1.0, 0.1, kind="lower").status == "fail"
    assert BoundCheck("l", 2.0, 1.0, 0.1, kind="lower").passed
    assert BoundCheck("m", 0.75, 1.0, 0.1, kind="match").status == "pass"
    assert BoundCheck("m", 1.25, 1.0, 0.1, kind="match").status == "pass"
    h = BoundCheck("h", 1.0 + 1e-12, 1.0, 0.0, hard=True)
    assert h.status == "fail" and h.z == math.inf
    assert BoundCheck("h", 1.0, 1.0, 0.0, hard=True).z == 0.0


def test_ball_count_single_point_is_intensity():
    chk = verify_ball_count_bound(50.0, 1, 0.05, 2, 2000, StreamKey(6))
    assert chk.bound == pytest.approx(50.0)
    assert abs(chk.empirical - 50.0) <= 3 * chk.se


def test_ball_count_bound_holds():
    chk = verify_ball_count_bound(200.0, 3, 0.02, 2, 500, StreamKey(7), box_volume=0.25)
    assert chk.bound == pytest.approx(ball_count_bound(200.0, 3, 0.02, 2, 0.25))
    assert chk.passed
    with pytest.raises(ValueError):
        verify_ball_count_bound(1.0, 0, 0.1, 1, 10, StreamKey(0))


def test_bad_box_checks_pass():
    sp = RegimeParams(d=1, n=200, r_n=0.0005, k0=2)
    assert verify_bad_box_probabilities("sparse", sp, 300, StreamKey(8)).passed
    dp = dense_params_for_speed(10.0, 2000.0).replace(M=3.0)
    chk = verify_bad_box_probabilities("dense", dp, 300, StreamKey(9))
    assert chk.passed
    assert chk.details["exact_expected_bad_points"] == pytest.approx(dense_bad_box_exact(dp, 0.1))
    with pytest.raises(ValueError):
        verify_bad_box_probabilities("critical", dp, 10, StreamKey(0))


def test_large_radius_and_knn_tail():
    p = RegimeParams(d=2, n=300, k=2, M=2.0)
    assert verify_large_radius_count(p, 100, StreamKey(10)).passed
    chk = verify_knn_tail(500.0, 2, 3, 2.0, 4000, StreamKey(11))
    assert chk.bound == pytest.approx(0.676676416183063459)
    assert chk.passed


def test_sprinkle_checks_shape():
    p = RegimeParams(d=1, n=10, k=1, M=5.0)
    checks = verify_sprinkle_bound(p, 2, 2000, StreamKey(12))
    assert len(checks) == 8
    assert all(c.status != "fail" for c in checks)


# --- distribution tests


def test_chi_square_refuses_small_cells():
    with pytest.raises(ValueError):
        coupling_distribution_test("poisson", 40.0, 4, 10, StreamKey(0))


@pytest.mark.parametrize("builder", ["poisson", "critical", "sparse_resample", "dense_resample"])
def test_couplings_are_poisson(builder):
    rep = coupling_distribution_test(builder, 200.0, 4, 400, StreamKey(13, builder))
    assert rep.passed
    assert sum(rep.observed) == 400 * 16


# --- CSV


def test_csv_output():
    text = write_csv(["x", "flag"], [[0.1, True], [1, False]], {"seed": 3})
    assert text == "# seed: 3\nx,flag\n0.1,true\n1,false\n"
    est = estimates_csv([EstimationResult.from_hits(1, 4, 2.0, 0.5)])
    assert est.splitlines()[0] == "speed,a,p_hat,SE,normalized_log"
    b = bound_checks_csv([BoundCheck("n", 1.0, 2.0, 0.5)])
    assert b.splitlines()[1] == "n,1.0,2.0,0.5,-2.0,true,pass"
