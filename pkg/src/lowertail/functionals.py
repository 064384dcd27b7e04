"""Geometric functionals in the sparse, critical and dense regimes."""
from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import (
    PointSet,
    SpatialIndex,
    connected_components,
    diameter,
    knn_distances,
    pairwise_distances,
    unit_ball_volume,
)
from .streams import StreamKey


@dataclass(frozen=True)
class RegimeParams:
    """Parameter bundle shared by all regimes; unused fields stay ``None``."""

    d: int = 1
    n: float = 1.0
    r_n: Optional[float] = None
    k0: int = 2
    k: int = 1
    alpha: float = 1.0
    a_n: Optional[float] = None
    s0: float = 0.0
    M: Optional[float] = None
    M_prime: Optional[float] = None
    M0: Optional[float] = None
    epsilon: Optional[float] = None

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")
        if not self.n > 0:
            raise ValueError("n must be > 0")
        if self.r_n is not None and not self.r_n > 0:
            raise ValueError("r_n must be > 0")
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.M is not None and self.M_prime is not None and not self.M_prime > self.M:
            raise ValueError("M_prime must exceed M")
        if self.epsilon is not None and not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")

    def replace(self, **kw) -> "RegimeParams":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RegimeParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                raise ValueError(f"missing required parameter: {name}")

    @property
    def scale(self) -> float:
        """Typical interpoint distance n^{-1/d}."""
        return self.n ** (-1.0 / self.d)

    @property
    def sparse_speed(self) -> float:
        self.require("r_n")
        return self.n**self.k0 * self.r_n ** (self.d * (self.k0 - 1))

    @property
    def dense_speed(self) -> float:
        self.require("a_n")
        return self.n * self.a_n ** (self.k - 1) * math.exp(-self.a_n)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite collection of weighted atoms on the real line."""

    locations: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=np.float64).reshape(-1)
        mass = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        if loc.shape != mass.shape:
            raise ValueError("locations and masses differ in length")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ValueError("masses must be finite and nonnegative")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "masses", mass)

    @classmethod
    def empty(cls) -> "DiscreteMeasure":
        return cls(np.empty(0), np.empty(0))

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.locations.tolist(), self.masses.tolist()))

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def __len__(self) -> int:
        return self.locations.shape[0]


# ---------------------------------------------------------------- scores


@dataclass(frozen=True)
class ScoreSpec:
    """Sparse-regime score.

    ``evaluate(coords, period)`` scores a configuration given as an (m, d)
    array in rescaled units; distances are toroidal with side ``period`` when
    it is set and Euclidean otherwise. ``bound(m)`` bounds the score over
    configurations of at most m points. ``total(phi, r)``, when present,
    returns the sum of the score over all r-components of phi in one pass.
    """

    name: str
    k0: int
    d: int
    evaluate: Callable[[np.ndarray, Optional[float]], float]
    bound: Optional[Callable[[int], float]] = None
    total: Optional[Callable[[PointSet, float], float]] = field(default=None, compare=False)


def _count_cliques(adj: list[set], size: int) -> int:
    """Number of vertex sets of the given size that are pairwise adjacent."""
    n = len(adj)
    if size == 1:
        return n
    higher = [sorted(j for j in adj[i] if j > i) for i in range(n)]

    def extend(cands, need):
        if need == 0:
            return 1
        total = 0
        for pos, v in enumerate(cands):
            rest = [u for u in cands[pos + 1:] if u in adj[v]]
            if len(rest) >= need - 1:
                total += extend(rest, need - 1)
        return total

    return sum(extend(higher[i], size - 1) for i in range(n))


def _adjacency(pairs: np.ndarray, n: int) -> list[set]:
    adj = [set() for _ in range(n)]
    for a, b in pairs.tolist():
        adj[a].add(b)
        adj[b].add(a)
    return adj


def clique_count_score(d: int, k0: int) -> ScoreSpec:
    """Number of k0-subsets whose points are pairwise within distance 1."""
    if k0 < 1:
        raise ValueError("k0 must be >= 1")

    def evaluate(coords, period=None):
        m = len(coords)
        if m < k0:
            return 0.0
        if k0 == 1:
            return float(m)
        D = pairwise_distances(coords, period)
        ii, jj = np.nonzero(np.triu(D <= 1.0, 1))
        if k0 == 2:
            return float(ii.size)
        return float(_count_cliques(_adjacency(np.stack([ii, jj], 1), m), k0))

    def total(phi, r):
        if k0 == 1:
            return float(len(phi))
        pairs, _ = SpatialIndex(phi, r).pairs(r)
        if k0 == 2:
            return float(len(pairs))
        return float(_count_cliques(_adjacency(pairs, len(phi)), k0))

    return ScoreSpec(f"clique{k0}", k0, d, evaluate, lambda m: float(math.comb(m, k0)), total)


def edge_length_score(d: int) -> ScoreSpec:
    """Sum of edge lengths over unordered pairs at distance at most 1."""

    def evaluate(coords, period=None):
        if len(coords) < 2:
            return 0.0
        D = np.triu(pairwise_distances(coords, period), 1)
        return float(np.sum(D[(D > 0) & (D <= 1.0)]))

    def total(phi, r):
        _, dist = SpatialIndex(phi, r).pairs(r)
        return float(np.sum(dist / r))

    return ScoreSpec("edge_length", 2, d, evaluate, lambda m: float(math.comb(m, 2)), total)


# ------------------------------------------------------------- sparse regime


def _check_sparse(params: RegimeParams, score: ScoreSpec) -> None:
    params.require("r_n")
    if score.k0 != params.k0:
        raise ValueError(f"score k0={score.k0} does not match params k0={params.k0}")


def sparse_H(phi: PointSet, params: RegimeParams, score: ScoreSpec, fast: bool = True) -> float:
    """Normalized sum of the score over connected components of the r_n-graph."""
    _check_sparse(params, score)
    if len(phi) == 0:
        return 0.0
    r = params.r_n
    if fast and score.total is not None:
        return score.total(phi, r) / params.sparse_speed
    total = 0.0
    for comp in connected_components(phi, r):
        if len(comp) >= score.k0:
            total += score.evaluate(phi.coords[comp] / r, 1.0 / r)
    return total / params.sparse_speed


def isolated_concentrated_sets(phi: PointSet, r: float, k0: int) -> list[tuple]:
    """k0-subsets with diameter <= k0 r whose other points all lie at distance >= r."""
    n = len(phi)
    if n < k0:
        return []
    idx = SpatialIndex(phi, k0 * r)
    pairs, dist = idx.pairs(k0 * r)
    near = [[] for _ in range(n)]
    close = [set() for _ in range(n)]  # strictly within r
    for (a, b), t in zip(pairs.tolist(), dist.tolist()):
        near[a].append(b)
        near[b].append(a)
        if t < r:
            close[a].add(b)
            close[b].add(a)
    dmat = {}
    for (a, b), t in zip(pairs.tolist(), dist.tolist()):
        dmat[(a, b)] = t
    out = []
    for i in range(n):
        if k0 == 1:
            if not close[i]:
                out.append((i,))
            continue
        cand = sorted(j for j in near[i] if j > i)
        for rest in itertools.combinations(cand, k0 - 1):
            group = (i,) + rest
            members = set(group)
            if any(not close[v] <= members for v in group):
                continue
            if all((a, b) in dmat for a, b in itertools.combinations(group, 2)):
                out.append(group)
    return out


def sparse_H_tilde(phi: PointSet, params: RegimeParams, score: ScoreSpec) -> float:
    """Normalized score sum over isolated, locally concentrated k0-subsets."""
    _check_sparse(params, score)
    r = params.r_n
    total = 0.0
    for group in isolated_concentrated_sets(phi, r, params.k0):
        total += score.evaluate(phi.coords[list(group)] / r, 1.0 / r)
    return total / params.sparse_speed


@dataclass
class ScoreValidation:
    inv: bool
    loc: bool
    bnd: bool
    pos: bool
    pos_estimate: float
    pos_se: float
    details: dict

    @property
    def passed(self) -> bool:
        return self.inv and self.loc and self.bnd and self.pos


def validate_score(score: ScoreSpec, trials: int, key: StreamKey, tol: float = 1e-9) -> ScoreValidation:
    """Randomized checks of the four sparse-score conditions.

    Shift invariance, locality and boundedness are checked on random
    configurations; positivity reports a Monte Carlo estimate of the integral
    of the score over k0-configurations containing the origin.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    d, k0 = score.d, score.k0
    rng = key.rng()
    worst_shift = 0.0
    for _ in range(trials):
        m = int(rng.integers(k0, k0 + 4))
        phi = rng.random((m, d)) * k0
        y = rng.uniform(-10.0, 10.0, size=d)
        a, b = score.evaluate(phi, None), score.evaluate(phi + y, None)
        worst_shift = max(worst_shift, abs(a - b) / (1.0 + abs(a)))
    inv = worst_shift <= tol

    loc_hits = 0
    if k0 >= 2:
        for _ in range(trials):
            phi = rng.random((k0, d)) * 3 * k0
            while diameter(phi, "euclidean") <= k0:
                phi = rng.random((k0, d)) * 3 * k0
            if score.evaluate(phi, None) != 0:
                loc_hits += 1
    loc = loc_hits == 0

    bnd_hits = 0
    if score.bound is None:
        bnd = False
    else:
        for _ in range(trials):
            m = int(rng.integers(1, k0 + 4))
            phi = rng.random((m, d)) * rng.uniform(0.1, 2.0)
            if score.evaluate(phi, None) > score.bound(m) + tol:
                bnd_hits += 1
        bnd = bnd_hits == 0

    # integrate over the cube [-k0, k0]^{d(k0-1)}: by locality the score
    # vanishes once any point leaves it
    if k0 == 1:
        est, se = score.evaluate(np.zeros((1, d)), None), 0.0
    else:
        vol = (2.0 * k0) ** (d * (k0 - 1))
        vals = np.empty(trials)
        for t in range(trials):
            pts = np.vstack([np.zeros((1, d)), rng.uniform(-k0, k0, size=(k0 - 1, d))])
            vals[t] = score.evaluate(pts, None)
        est = vol * float(vals.mean())
        se = vol * float(vals.std(ddof=1)) / math.sqrt(trials) if trials > 1 else float("inf")
    pos = est - 3 * se > 0
    details = {"max_relative_shift_error": worst_shift, "loc_violations": loc_hits, "bnd_violations": bnd_hits}
    return ScoreValidation(inv, loc, bnd, pos, est, se, details)


# ----------------------------------------------------------- critical regime


def _knn_with_ties(phi: PointSet, k: int):
    """k nearest distances per point plus the count of extra ties at R_k."""
    n = len(phi)
    extra = min(k + 1, n - 1)
    D = knn_distances(phi, extra)
    ties = np.zeros(n, dtype=np.int64)
    if extra > k:
        tied = np.flatnonzero(D[:, k] == D[:, k - 1])
        if tied.size:
            idx = SpatialIndex(phi)
            for i in tied.tolist():
                R = D[i, k - 1]
                inside = idx.counts(phi.coords[i], R)[0] - idx.counts(phi.coords[i], 0.0)[0]
                ties[i] = inside - k
    return D[:, :k], ties


def knn_scores(phi: PointSet, params: RegimeParams) -> np.ndarray:
    """Rescaled kNN power sum per point; all points tied at R_k are included."""
    k, a = params.k, params.alpha
    if len(phi) <= k:
        return np.full(len(phi), np.inf)
    D, ties = _knn_with_ties(phi, k)
    s = params.n ** (1.0 / params.d)
    S = np.sum((s * D) ** a, axis=1)
    return S + ties * (s * D[:, k - 1]) ** a


def critical_knn_H(phi: PointSet, params: RegimeParams) -> float:
    """(1/n) times the sum over points of their rescaled kNN power sums."""
    if len(phi) == 0:
        return 0.0
    return float(np.sum(knn_scores(phi, params))) / params.n


def _cap(params: RegimeParams, g, representation: str) -> float:
    params.require("M", "M_prime")
    if not params.M_prime > params.M:
        raise ValueError("M_prime must exceed M")
    if g is None:
        g = math.exp if representation == "knn" else (lambda m: m**params.alpha)
    return float(g(params.M)) if callable(g) else float(g)


def _midpoints(resolution: int, d: int) -> np.ndarray:
    axis = (np.arange(resolution) + 0.5) / resolution
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def cutoff_scores(phi: PointSet, params: RegimeParams, g=None, representation: str = "knn", resolution: int = 64) -> np.ndarray:
    """Per-point (or per-probe) scores truncated at rescaled radius M' and capped at g(M).

    A neighbourhood truncated below the required number of points scores
    +inf before the cap, so its capped score is g(M).
    """
    cap = _cap(params, g, representation)
    reach = params.M_prime * params.scale
    s = params.n ** (1.0 / params.d)
    if representation == "knn":
        k = params.k
        if len(phi) <= k:
            return np.full(len(phi), cap)
        D, ties = _knn_with_ties(phi, k)
        raw = np.sum((s * D) ** params.alpha, axis=1) + ties * (s * D[:, k - 1]) ** params.alpha
        raw[D[:, k - 1] > reach] = np.inf
    elif representation == "contact":
        from .geometry import contact_distances

        cd = contact_distances(_midpoints(resolution, params.d), phi)
        raw = (s * cd) ** params.alpha
        raw[cd > reach] = np.inf
    else:
        raise ValueError(f"unknown representation {representation!r}")
    return np.minimum(raw, cap)


def critical_cutoff_H(phi: PointSet, params: RegimeParams, g=None, representation: str = "knn", resolution: int = 64) -> float:
    """Cut-off functional: truncation at rescaled radius M' and cap g(M).

    ``g`` is a scale function of M or a number; it defaults to exp for the
    kNN score and m -> m**alpha for contact distances.
    """
    sc = cutoff_scores(phi, params, g, representation, resolution)
    if representation == "knn":
        return float(np.sum(sc)) / params.n
    return float(np.mean(sc))


def contact_H(phi: PointSet, params: RegimeParams, resolution: int = 256) -> float:
    """Midpoint-rule integral of the rescaled contact distance to the power alpha."""
    from .geometry import contact_distances

    if len(phi) == 0:
        return float("inf")
    cd = contact_distances(_midpoints(resolution, params.d), phi)
    return float(np.mean((params.n ** (1.0 / params.d) * cd) ** params.alpha))


def contact_H_refined(phi: PointSet, params: RegimeParams, resolution: int = 256) -> tuple[float, float]:
    """contact_H at ``resolution`` and the change when the resolution is doubled."""
    coarse = contact_H(phi, params, resolution)
    fine = contact_H(phi, params, 2 * resolution)
    return fine, abs(fine - coarse)


# -------------------------------------------------------------- dense regime


def _check_dense(params: RegimeParams) -> None:
    params.require("a_n")
    if not params.a_n > 0:
        raise ValueError("a_n must be > 0")


def centered_volumes(phi: PointSet, params: RegimeParams) -> np.ndarray:
    """n kappa_d R_k^d - a_n for every point (+inf when R_k is infinite)."""
    from .geometry import knn_radii

    _check_dense(params)
    if len(phi) == 0:
        return np.empty(0)
    R = knn_radii(phi, params.k)
    return params.n * unit_ball_volume(params.d) * R**params.d - params.a_n


def dense_empirical_measure(phi: PointSet, params: RegimeParams) -> DiscreteMeasure:
    """Atoms at centered kNN ball volumes, mass 1/rho each, restricted to [s0, inf)."""
    v = centered_volumes(phi, params)
    v = v[v >= params.s0]
    w = 1.0 / params.dense_speed
    return DiscreteMeasure(v, np.full(v.shape, w))


def dense_T(measure: DiscreteMeasure, s0: float, M: float = float("inf")) -> float:
    """Integral of min(x - s0, M) over [s0, inf) against the measure."""
    keep = measure.locations >= s0
    x = np.minimum(measure.locations[keep] - s0, M)
    return float(np.sum(x * measure.masses[keep]))


def dense_H(phi: PointSet, params: RegimeParams) -> float:
    """Normalized sum of positive parts of centered kNN ball volumes."""
    return dense_T(dense_empirical_measure(phi, params), params.s0)


def functional_record(name: str, params: RegimeParams, value: float, diagnostics: dict | None = None) -> dict:
    return {"functional": name, "params": params.to_dict(), "value": value, "diagnostics": diagnostics or {}}
