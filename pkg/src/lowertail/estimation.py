"""Monte Carlo tail estimation and the verification suites for the checkable bounds."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .functionals import RegimeParams, clique_count_score, critical_knn_H, dense_H, sparse_H
from .geometry import PointSet, SpatialIndex, knn_distances, unit_ball_volume
from .processes import GridSpec, bernoulli_decisions, resample_boxes, sample_critical_coupling, sample_poisson
from .rates import knn_tail_shifted_powers, knn_tail_probability
from .sprinkling import (
    dense_grid,
    dense_scores,
    find_large_radius_nodes,
    knn_insertion_balls,
    large_radius_bound,
    sparse_bad_boxes,
    sparse_grid,
    sprinkle_event,
    sprinkle_prob_lower_bound,
)
from .streams import StreamKey

MIN_REPLICATES = 100


def map_replicates(fn: Callable[[int], object], replicates: int, threads: int = 1, chunk: int = 256) -> list:
    """``[fn(i) for i in range(replicates)]``, optionally spread over threads.

    Results are returned in replicate order, so the output does not depend
    on the thread count.
    """
    if threads <= 1 or replicates <= chunk:
        return [fn(i) for i in range(replicates)]
    blocks = [range(s, min(s + chunk, replicates)) for s in range(0, replicates, chunk)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(lambda b: [fn(i) for i in b], blocks)
        return [v for part in parts for v in part]


# ----------------------------------------------------------------- results


@dataclass
class EstimationResult:
    p_hat: float
    std_err: float
    replicates: int
    speed: float
    normalized_log: float
    a: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_hits(cls, hits: int, replicates: int, speed: float, a: float = math.nan, **diag) -> "EstimationResult":
        p = hits / replicates
        se = math.sqrt(p * (1 - p) / replicates)
        nl = math.inf if p == 0 else -math.log(p) / speed + 0.0
        return cls(p, se, replicates, speed, nl, a, dict(diag))

    def row(self) -> list:
        return [self.speed, self.a, self.p_hat, self.std_err, self.normalized_log]


ESTIMATE_FIELDS = ("speed", "a", "p_hat", "SE", "normalized_log")


@dataclass
class BoundCheck:
    """Comparison of an empirical quantity with a bound, in SE units.

    ``kind`` is ``upper`` (empirical should not exceed the bound), ``lower``
    (should not fall below it) or ``match`` (two-sided). Deviations within
    ``slack_SEs`` pass; beyond that up to ``fail_SEs`` they are warnings.
    """

    name: str
    empirical: float
    bound: float
    se: float
    slack_SEs: float = 3.0
    kind: str = "upper"
    hard: bool = False
    fail_SEs: float = 4.0
    details: dict = field(default_factory=dict)

    @property
    def excess(self) -> float:
        """Signed violation measured in the direction of the check."""
        if self.kind == "upper":
            return self.empirical - self.bound
        if self.kind == "lower":
            return self.bound - self.empirical
        return abs(self.empirical - self.bound)

    @property
    def z(self) -> float:
        e = self.excess
        if self.se > 0:
            return e / self.se
        return 0.0 if e <= 0 else math.inf

    @property
    def passed(self) -> bool:
        if self.hard:
            return self.excess <= 0
        return self.excess <= self.slack_SEs * self.se

    @property
    def status(self) -> str:
        if self.passed:
            return "pass"
        if not self.hard and self.excess <= self.fail_SEs * self.se:
            return "warn"
        return "fail"

    def row(self) -> list:
        return [self.name, self.empirical, self.bound, self.se, self.z, self.passed, self.status]


BOUND_FIELDS = ("name", "empirical", "bound", "se", "SEs", "pass", "status")


# ------------------------------------------------------------- functionals


@dataclass(frozen=True)
class FunctionalSpec:
    """A functional of a Poisson sample together with the speed of its regime."""

    name: str
    regime: str
    evaluate: Callable[[PointSet, RegimeParams], float]

    def speed(self, params: RegimeParams) -> float:
        if self.regime == "sparse":
            return params.sparse_speed
        if self.regime == "dense":
            return params.dense_speed
        return params.n

    def replicate(self, params: RegimeParams, key: StreamKey) -> float:
        return self.evaluate(sample_poisson(params.n, params.d, key), params)


def sparse_edge_functional() -> FunctionalSpec:
    def ev(phi, params):
        return sparse_H(phi, params, clique_count_score(params.d, 2))

    return FunctionalSpec("sparse_edges", "sparse", ev)


def sparse_clique_functional(k0: int) -> FunctionalSpec:
    def ev(phi, params):
        return sparse_H(phi, params, clique_count_score(params.d, k0))

    return FunctionalSpec(f"sparse_clique{k0}", "sparse", ev)


def critical_knn_functional() -> FunctionalSpec:
    return FunctionalSpec("critical_knn", "critical", critical_knn_H)


def dense_knn_functional() -> FunctionalSpec:
    return FunctionalSpec("dense_knn", "dense", dense_H)


def constant_functional(value: float = 0.0, regime: str = "critical") -> FunctionalSpec:
    return FunctionalSpec("constant", regime, lambda phi, params: value)


FUNCTIONALS = {
    "sparse": sparse_edge_functional,
    "critical": critical_knn_functional,
    "dense": dense_knn_functional,
}


def replicate_values(functional: FunctionalSpec, params: RegimeParams, replicates: int, key: StreamKey, threads: int = 1) -> np.ndarray:
    """Functional values on independent Poisson samples, one per replicate index."""
    return np.asarray(map_replicates(lambda i: functional.replicate(params, key.at(i)), replicates, threads), dtype=np.float64)


def tail_from_values(values: np.ndarray, a: float, speed: float) -> EstimationResult:
    """Lower-tail frequency of a fixed replicate set; monotone in a by construction."""
    hits = int(np.count_nonzero(values <= a))
    return EstimationResult.from_hits(hits, len(values), speed, a)


def estimate_lower_tail(functional: FunctionalSpec, params: RegimeParams, a: float, replicates: int, key: StreamKey, threads: int = 1) -> EstimationResult:
    """Frequency of {H <= a} over independent replicates."""
    if replicates < MIN_REPLICATES:
        raise ValueError(f"replicates must be >= {MIN_REPLICATES}")
    values = replicate_values(functional, params, replicates, key, threads)
    return tail_from_values(values, a, functional.speed(params))


def scaling_curve(functional: FunctionalSpec, params_list: Sequence[RegimeParams], a: float, replicates: int, key: StreamKey, threads: int = 1) -> list[EstimationResult]:
    """One tail estimate per parameter set; rows with p_hat = 0 are flagged."""
    out = []
    for i, params in enumerate(params_list):
        res = estimate_lower_tail(functional, params, a, replicates, key.child(f"speed{i}"), threads)
        res.diagnostics["zero"] = res.p_hat == 0
        out.append(res)
    return out


def sparse_params_for_speed(rho: float, n: float, d: int = 1, k0: int = 2) -> RegimeParams:
    """Sparse parameters at intensity n whose speed n^k0 r^{d(k0-1)} equals rho."""
    r = (rho / n**k0) ** (1.0 / (d * (k0 - 1)))
    return RegimeParams(d=d, n=n, r_n=r, k0=k0)


def dense_params_for_speed(rho: float, n: float, d: int = 1, k: int = 1, s0: float = 0.0) -> RegimeParams:
    """Dense parameters at intensity n whose speed n a^{k-1} e^{-a} equals rho (a on the decreasing branch)."""
    from scipy.optimize import brentq

    f = lambda a: math.log(n) + (k - 1) * math.log(a) - a - math.log(rho)
    lo = max(k - 1.0, 1e-12)
    if f(lo) < 0:
        raise ValueError("speed too large for this intensity")
    hi = lo + 1.0
    while f(hi) > 0:
        hi *= 2.0
    return RegimeParams(d=d, n=n, k=k, a_n=brentq(f, lo, hi, xtol=1e-14), s0=s0)


# --------------------------------------------------------------- verifiers


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()) if v.size else math.nan, math.inf
    return float(v.mean()), float(v.std(ddof=1)) / math.sqrt(v.size)


def ball_count_bound(m: float, l: int, r: float, d: int, box_volume: float = 1.0) -> float:
    """m^l kappa_d^{l-1} r^{(l-1) d} |Q|."""
    return m**l * unit_ball_volume(d) ** (l - 1) * r ** ((l - 1) * d) * box_volume


def verify_ball_count_bound(m: float, l: int, r: float, d: int, replicates: int, key: StreamKey, box_volume: float = 1.0, threads: int = 1) -> BoundCheck:
    """Mean number of points in the box [0, |Q|^{1/d})^d that see at least l points
    (themselves included) within distance r."""
    if l < 1:
        raise ValueError("l must be >= 1")
    side = box_volume ** (1.0 / d)

    def one(i):
        P = sample_poisson(m, d, key.at(i))
        if len(P) == 0:
            return 0
        inbox = np.all(P.coords < side, axis=1)
        counts = SpatialIndex(P, r).counts(P.coords[inbox], r)
        return int(np.count_nonzero(counts >= l))

    emp, se = _mean_se(map_replicates(one, replicates, threads))
    return BoundCheck(f"ball_count m={m:g} l={l} r={r:g} d={d}", emp, ball_count_bound(m, l, r, d, box_volume), se)


def sparse_bad_box_bound(params: RegimeParams) -> float:
    d, k0 = params.d, params.k0
    return unit_ball_volume(d) ** k0 * (2**d * k0) ** (k0 * d) * params.n * params.r_n**d


def dense_bad_box_bound(params: RegimeParams) -> float:
    return 2 * params.k * math.exp(-params.M - params.s0)


def dense_bad_box_exact(params: RegimeParams, box_volume: float) -> float:
    """Expected number of unbounded points in one box: n|Q| P(Poisson(m_n) <= k - 1)."""
    m_n = params.M + params.a_n + params.s0
    return params.n * box_volume * knn_tail_probability(m_n, params.k)


def verify_bad_box_probabilities(regime: str, params: RegimeParams, replicates: int, key: StreamKey, threads: int = 1) -> BoundCheck:
    """Per-box frequency of bad boxes against the regime's bound.

    The frequency is averaged per replicate first, so the SE reflects
    dependence between boxes of one sample.
    """
    if regime == "sparse":
        params.require("r_n")
        grid = sparse_grid(params)
        bound = sparse_bad_box_bound(params)

        def one(i):
            P = sample_poisson(params.n, params.d, key.at(i))
            return len(sparse_bad_boxes(P, params, grid)) / grid.n_boxes

    elif regime == "dense":
        params.require("a_n", "M")
        grid = dense_grid(params)
        bound = dense_bad_box_bound(params)

        def one(i):
            P = sample_poisson(params.n, params.d, key.at(i))
            if len(P) == 0:
                return 0.0
            bad = grid.box_of(P.coords)[dense_scores(P, params) > params.M]
            return np.unique(bad).size / grid.n_boxes

    else:
        raise ValueError(f"unknown regime {regime!r}")
    emp, se = _mean_se(map_replicates(one, replicates, threads))
    details = {"boxes": grid.n_boxes, "box_volume": grid.volume}
    if regime == "dense":
        details["exact_expected_bad_points"] = dense_bad_box_exact(params, grid.volume)
    return BoundCheck(f"bad_box_{regime}", emp, bound, se, details=details)


def verify_large_radius_count(params: RegimeParams, replicates: int, key: StreamKey, threads: int = 1) -> BoundCheck:
    """Deterministic bound on the number of large-radius nodes, checked on every sample."""
    bound = large_radius_bound(params)

    def one(i):
        P = sample_poisson(params.n, params.d, key.at(i))
        return len(find_large_radius_nodes(P, params))

    worst = max(map_replicates(one, replicates, threads), default=0)
    return BoundCheck(f"large_radius_count k={params.k} M={params.M:g}", float(worst), bound, 0.0, hard=True)


def _se_at(p: float, draws: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / draws)


def verify_sprinkle_bound(params: RegimeParams, configs: int, draws: int, key: StreamKey, threads: int = 1) -> list[BoundCheck]:
    """Conditional probability of the three-part sprinkling event against its lower bound.

    For each conditioning configuration the coupling is re-drawn ``draws``
    times. Besides the overall bound, each part is compared with its exact
    conditional probability. SEs are evaluated at the reference value, which
    stays meaningful when the event is too rare to be observed.
    """
    params.require("M")
    n, d, M, k = params.n, params.d, params.M, params.k
    V = unit_ball_volume(d) * 2.0**-d  # n times the volume of a radius n^{-1/d}/2 ball
    lam = V / M
    checks = []
    for c in range(configs):
        ck = key.child(f"config{c}")
        base = sample_poisson(n, d, ck)
        centers, radius, m = knn_insertion_balls(base, params) if len(base) else (np.empty((0, d)), params.scale / 2, k)
        N, I = len(base), len(centers)
        bound = sprinkle_prob_lower_bound(N, n, M, m, V, I)

        def one(i):
            cp = sample_critical_coupling(n, d, M, ck.child("draw").at(i), base=base)
            return sprinkle_event(cp, centers, radius, m)

        ev = np.asarray(map_replicates(one, draws, threads), dtype=bool).reshape(draws, 3)
        allp = float(np.all(ev, axis=1).mean())
        p1 = (1 - 1 / M) ** N
        p2 = math.exp(-(n / M) * (1 - I * V / n))
        p3 = (lam**m / math.factorial(m) * math.exp(-lam)) ** I
        f2f3 = float(np.all(ev[:, 1:], axis=1).mean())
        tag = f"config={c} N={N} I={I}"
        checks.append(BoundCheck(f"sprinkle_event {tag}", allp, bound, _se_at(bound, draws), kind="lower",
                                 details={"exact": p1 * p2 * p3}))
        checks.append(BoundCheck(f"sprinkle_part1 {tag}", float(ev[:, 0].mean()), p1, _se_at(p1, draws), kind="match"))
        checks.append(BoundCheck(f"sprinkle_part2 {tag}", float(ev[:, 1].mean()), p2, _se_at(p2, draws), kind="match"))
        # part 3 is conditioned on part 2 through the joint frequency
        checks.append(BoundCheck(f"sprinkle_part23 {tag}", f2f3, p2 * p3, _se_at(p2 * p3, draws), kind="match"))
    return checks


def verify_knn_tail(n: float, d: int, k: int, a: float, replicates: int, key: StreamKey, threads: int = 1) -> BoundCheck:
    """Frequency of {n kappa_d R_k^d >= a} at a uniform extra point against the Poisson lower tail."""
    kappa = unit_ball_volume(d)

    def one(i):
        rk = key.at(i)
        P = sample_poisson(n, d, rk.child("points"))
        x = rk.child("probe").rng().random((1, d))
        if len(P) < k:
            return True
        R = knn_distances(P, k, x)[0, k - 1]
        return bool(n * kappa * R**d >= a)

    p = float(np.mean(map_replicates(one, replicates, threads)))
    exact = knn_tail_probability(a, k)
    return BoundCheck(f"knn_tail k={k} a={a:g}", p, exact, _se_at(exact, replicates), kind="match",
                      details={"shifted_powers_variant": knn_tail_shifted_powers(a, k)})


# ------------------------------------------------------ distribution tests


@dataclass
class ChiSquareReport:
    builder: str
    statistic: float
    dof: int
    p_value: float
    bins: list
    observed: list
    expected: list

    @property
    def passed(self) -> bool:
        return self.p_value > 1e-3


def _poisson_bins(mean: float, total: int, min_expected: float = 5.0) -> list[tuple[int, int]]:
    """Count ranges [lo, hi] (hi = -1 for the open tail) with expected frequency >= min_expected."""
    lo_cut = 0
    while total * stats.poisson.cdf(lo_cut, mean) < min_expected:
        lo_cut += 1
    hi_cut = int(stats.poisson.isf(min_expected / total, mean))
    while total * stats.poisson.sf(hi_cut - 1, mean) < min_expected:
        hi_cut -= 1
    bins = [(0, lo_cut)]
    bins += [(c, c) for c in range(lo_cut + 1, hi_cut)]
    bins.append((hi_cut, -1))
    return bins


def coupling_builders(params: RegimeParams, eps: float = 0.3, M: float = 4.0, per_axis: int = 5) -> dict:
    """Samplers of processes that should again be Poisson(n)."""
    n, d = params.n, params.d

    def poisson(key):
        return sample_poisson(n, d, key)

    def critical(key):
        return sample_critical_coupling(n, d, M, key).union

    def bernoulli_resample(g):
        def build(key):
            P = sample_poisson(n, d, key.child("P"))
            Pp = sample_poisson(n, d, key.child("P'"))
            return resample_boxes(P, Pp, bernoulli_decisions(g, eps, key.child("decisions")), g)

        return build

    sgrid = sparse_grid(params) if params.r_n is not None else GridSpec(d, per_axis)
    dgrid = dense_grid(params) if params.a_n is not None else GridSpec(d, per_axis - 2)
    return {
        "poisson": poisson,
        "critical": critical,
        "sparse_resample": bernoulli_resample(sgrid),
        "dense_resample": bernoulli_resample(dgrid),
    }


def coupling_distribution_test(builder: str, n: float, cells_per_axis: int, replicates: int, key: StreamKey, d: int = 2,
                               eps: float = 0.3, M: float = 4.0, threads: int = 1, params: RegimeParams | None = None) -> ChiSquareReport:
    """Pooled chi-square test of per-cell counts against Poisson(n / cells)."""
    cells = cells_per_axis**d
    mean = n / cells
    if mean < 5:
        raise ValueError(f"expected cell count {mean:g} < 5")
    params = params or RegimeParams(d=d, n=n)
    build = coupling_builders(params, eps, M)[builder]
    grid = GridSpec(d, cells_per_axis)
    counts = np.concatenate(map_replicates(lambda i: grid.cell_counts(build(key.at(i))), replicates, threads))
    total = counts.size
    bins = _poisson_bins(mean, total)
    obs, exp = [], []
    for lo, hi in bins:
        if hi < 0:
            obs.append(int(np.count_nonzero(counts >= lo)))
            exp.append(total * float(stats.poisson.sf(lo - 1, mean)))
        elif lo == 0:
            obs.append(int(np.count_nonzero(counts <= hi)))
            exp.append(total * float(stats.poisson.cdf(hi, mean)))
        else:
            obs.append(int(np.count_nonzero(counts == lo)))
            exp.append(total * float(stats.poisson.pmf(lo, mean)))
    stat, p = stats.chisquare(obs, exp)
    return ChiSquareReport(builder, float(stat), len(bins) - 1, float(p), [list(b) for b in bins], obs, exp)


# ---------------------------------------------------------------- CSV out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(header: Sequence[str], rows, meta: dict | None = None) -> str:
    """CSV text with optional '#'-prefixed metadata lines before the header row."""
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def estimates_csv(results: Sequence[EstimationResult], meta: dict | None = None) -> str:
    return write_csv(ESTIMATE_FIELDS, [r.row() for r in results], meta)


def bound_checks_csv(checks: Sequence[BoundCheck], meta: dict | None = None) -> str:
    return write_csv(BOUND_FIELDS, [c.row() for c in checks], meta)
