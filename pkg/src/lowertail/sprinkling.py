"""Sprinkling and resampling constructions with their target events."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functionals import RegimeParams, critical_cutoff_H, dense_H
from .geometry import (
    PointSet,
    SpatialIndex,
    contact_distances,
    knn_distances,
    knn_radii,
    unit_ball_volume,
)
from .processes import GridSpec, resample_boxes
from .streams import StreamKey


@dataclass
class SprinkleReport:
    bad_count: int
    inserted: PointSet
    target_event_holds: bool
    max_post_radius: float
    excess: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "bad_count": self.bad_count,
            "inserted": self.inserted.coords.tolist(),
            "target_event_holds": self.target_event_holds,
            "max_post_radius": self.max_post_radius,
            "excess": self.excess,
            "details": self.details,
        }


def _uniform_in_balls(centers: np.ndarray, radius: float, per_center: int, rng: np.random.Generator) -> np.ndarray:
    """``per_center`` uniform points in the ball around each center, wrapped onto the torus."""
    m, d = centers.shape
    total = m * per_center
    if total == 0:
        return np.empty((0, d))
    g = rng.standard_normal((total, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = radius * rng.random(total) ** (1.0 / d)
    return np.repeat(centers, per_center, axis=0) + g * rad[:, None]


# ------------------------------------------------------------ kNN sprinkling


def large_radius_bound(params: RegimeParams) -> float:
    """Deterministic bound k 2^d n / (kappa_d M^d) on the number of large-radius nodes."""
    d = params.d
    return params.k * 2**d * params.n / (unit_ball_volume(d) * params.M**d)


def find_large_radius_nodes(phi: PointSet, params: RegimeParams) -> np.ndarray:
    """Indices of points whose k-NN radius exceeds M n^{-1/d}."""
    params.require("M")
    if len(phi) == 0:
        return np.empty(0, dtype=np.int64)
    R = knn_radii(phi, params.k)
    J = np.flatnonzero(R > params.M * params.scale)
    if len(J) > large_radius_bound(params):
        raise AssertionError(f"{len(J)} large-radius nodes exceed the deterministic bound {large_radius_bound(params):.6g}")
    return J


def _min_image(delta: np.ndarray) -> np.ndarray:
    return delta - np.round(delta)


def distinguished_subset(J, phi: PointSet, params: RegimeParams) -> np.ndarray:
    """Members of J that are lexicographically smallest among their n^{-1/d}-neighbours.

    Order is taken on minimal-image displacements from the candidate, so the
    comparison does not depend on where the torus is cut. Coincident points
    fall back to index order.
    """
    J = np.asarray(J, dtype=np.int64)
    if J.size == 0:
        return J
    r = params.scale
    idx = SpatialIndex(phi, r)
    keep = []
    for x in J.tolist():
        nb = idx.ball(phi.coords[x], r)
        nb = nb[nb != x]
        ok = True
        for y, disp in zip(nb.tolist(), _min_image(phi.coords[nb] - phi.coords[x])):
            nz = np.flatnonzero(disp)
            if nz.size == 0:
                if y < x:
                    ok = False
                    break
            elif disp[nz[0]] < 0:
                ok = False
                break
        if ok:
            keep.append(x)
    return np.asarray(keep, dtype=np.int64)


def knn_sprinkle(phi: PointSet, params: RegimeParams, key: StreamKey) -> tuple[PointSet, SprinkleReport]:
    """Insert k uniform points in the n^{-1/d}/2-ball around each distinguished node."""
    params.require("M")
    k, d, s = params.k, params.d, params.scale
    J = find_large_radius_nodes(phi, params)
    Jt = distinguished_subset(J, phi, params)
    rng = key.rng()
    new = _uniform_in_balls(phi.coords[Jt], s / 2, k, rng)
    inserted = PointSet(new, d) if len(new) else PointSet.empty(d)
    union = phi.union(inserted)
    watch = np.concatenate([J, len(phi) + np.arange(len(inserted))]).astype(np.int64)
    if watch.size:
        post = knn_radii(union, k)[watch]
        max_post = float(post.max())
    else:
        max_post = 0.0
    holds = bool(max_post <= (k + 1) * s)
    excess = float("nan")
    if params.M_prime is not None:
        excess = critical_cutoff_H(union, params) - critical_cutoff_H(phi, params)
    details = {
        "distinguished": len(Jt),
        "radius_target": (k + 1) * s,
        "count_bound": large_radius_bound(params),
        "excess_bound": k * k * len(J) / params.n,
    }
    return union, SprinkleReport(len(J), inserted, holds, max_post, excess, details)


def knn_insertion_balls(phi: PointSet, params: RegimeParams) -> tuple[np.ndarray, float, int]:
    """Centers, radius and point count per ball of the kNN sprinkling target event."""
    Jt = distinguished_subset(find_large_radius_nodes(phi, params), phi, params)
    return phi.coords[Jt], params.scale / 2, params.k


def sprinkle_event(coupling, centers: np.ndarray, radius: float, m: int) -> tuple[bool, bool, bool]:
    """Indicators of the three parts of the sprinkling event for a drawn coupling.

    (1) thinning retained every base point; (2) no sprinkled point falls
    outside the insertion balls; (3) each ball receives exactly m points.
    """
    f1 = bool(np.all(coupling.retained))
    sp = coupling.sprinkle
    if len(centers) == 0:
        return f1, len(sp) == 0, True
    if len(sp) == 0:
        return f1, True, m == 0
    owner = np.full(len(sp), -1)
    for c, center in enumerate(centers):
        delta = _min_image(sp.coords - center)
        inside = np.sqrt((delta * delta).sum(axis=1)) <= radius
        owner[inside & (owner < 0)] = c
    f2 = bool(np.all(owner >= 0))
    counts = np.bincount(owner[owner >= 0], minlength=len(centers))
    f3 = bool(np.all(counts == m))
    return f1, f2, f3


def sprinkle_prob_lower_bound(N_n: int, n: float, M: float, m: int, V: float, I: int) -> float:
    """(1 - 1/M)^N e^{-n/M} ((V/M)^m / m! e^{-V/M})^I, evaluated in log space."""
    if not M > 1:
        raise ValueError("M must exceed 1")
    if not V > 0 or m < 0:
        raise ValueError("need V > 0 and m >= 0")
    log_ball = m * math.log(V / M) - math.lgamma(m + 1) - V / M
    return math.exp(N_n * math.log1p(-1.0 / M) - n / M + I * log_ball)


# -------------------------------------------------------- contact sprinkling


def contact_threshold(d: int) -> float:
    """Smallest M for which the post-sprinkle contact distance bound is guaranteed."""
    return math.exp(max(2.0, 2.0 * math.sqrt(d)))


def contact_grid(params: RegimeParams) -> dict:
    """Box and subcube layout of the contact sprinkling, after rounding."""
    params.require("M")
    M, s = params.M, params.scale
    if math.log(M) < 2:
        raise ValueError("contact sprinkling needs log M >= 2")
    nominal_box = s * M / math.log(M)
    per_axis = max(2, int(round(1.0 / nominal_box)))
    box = 1.0 / per_axis
    sub = max(1, int(round(box / (s * math.log(M)))))
    cube = box / sub
    radius = min(s, cube / 2)
    return {
        "per_axis": per_axis,
        "box_side": box,
        "sub_per_axis": sub,
        "subcube_side": cube,
        "ball_radius": radius,
        "nominal_box_side": nominal_box,
        "nominal_subcube_side": s * math.log(M),
        "adjusted": bool(abs(box - nominal_box) > 1e-12 or abs(cube - s * math.log(M)) > 1e-12 or radius < s),
    }


def _probe_resolution(per_axis: int, sub: int, d: int) -> int:
    res = max(64, 4 * per_axis * sub)
    return int(min(res, math.floor((1 << 21) ** (1.0 / d))))


def contact_sprinkle(phi: PointSet, params: RegimeParams, key: StreamKey, probe_resolution: int | None = None) -> tuple[PointSet, SprinkleReport]:
    """Fill every empty box with one point near the center of each of its subcubes."""
    lay = contact_grid(params)
    d = params.d
    grid = GridSpec(d, lay["per_axis"])
    bad = np.flatnonzero(grid.cell_counts(phi) == 0)
    sub = lay["sub_per_axis"]
    offsets = (np.stack(np.meshgrid(*([np.arange(sub)] * d), indexing="ij"), -1).reshape(-1, d) + 0.5) * lay["subcube_side"]
    centers = np.concatenate([grid.lower_corner(j)[None, :] + offsets for j in bad.tolist()]) if bad.size else np.empty((0, d))
    new = _uniform_in_balls(centers, lay["ball_radius"], 1, key.rng())
    inserted = PointSet(new, d) if len(new) else PointSet.empty(d)
    union = phi.union(inserted)
    res = probe_resolution or _probe_resolution(grid.per_axis, sub, d)
    axis = (np.arange(res) + 0.5) / res
    probes = np.stack([m.reshape(-1) for m in np.meshgrid(*([axis] * d), indexing="ij")], axis=1)
    max_cd = float(contact_distances(probes, union).max()) if len(union) else float("inf")
    excess = float("nan")
    if params.M_prime is not None:
        excess = critical_cutoff_H(union, params, representation="contact") - critical_cutoff_H(phi, params, representation="contact")
    details = dict(lay)
    details.update(
        {
            "subcubes": int(len(centers)),
            "probe_resolution": res,
            "contact_target": params.M * params.scale,
            "threshold_M": contact_threshold(d),
            "all_boxes_occupied": bool(np.all(grid.cell_counts(union) > 0)),
        }
    )
    return union, SprinkleReport(int(bad.size), inserted, bool(max_cd <= params.M * params.scale), max_cd, excess, details)


# --------------------------------------------------------- sparse resampling


def sparse_grid(params: RegimeParams) -> GridSpec:
    """Boxes of side about (sparse speed)^{-1/d}; per-axis count rounded, at least 2."""
    per_axis = max(2, int(round(params.sparse_speed ** (1.0 / params.d))))
    return GridSpec(params.d, per_axis)


def sparse_bad_boxes(P: PointSet, params: RegimeParams, grid: GridSpec | None = None) -> np.ndarray:
    """Boxes holding a point with at least k0 other points within 2^d k0 r_n."""
    params.require("r_n")
    grid = grid or sparse_grid(params)
    if len(P) == 0:
        return np.empty(0, dtype=np.int64)
    reach = 2**params.d * params.k0 * params.r_n
    counts = SpatialIndex(P, reach).counts(P.coords, reach)
    flagged = grid.box_of(P.coords)[counts >= params.k0 + 1]
    return np.unique(flagged)


def sparse_box_target(P_prime: PointSet, boxes, params: RegimeParams, grid: GridSpec) -> bool:
    """Every point of P' in each listed box sees at most k0 - 1 points of P' (itself included)
    within 2^d k0 r_n inside that box."""
    reach = 2**params.d * params.k0 * params.r_n
    owner = grid.box_of(P_prime.coords)
    for b in np.asarray(list(boxes), dtype=np.int64).tolist():
        inside = P_prime.take(np.flatnonzero(owner == b))
        if len(inside) == 0:
            continue
        # the box is a convex cell, so torus wrap never joins two of its points
        # more closely than their in-box distance unless the box spans half the torus
        counts = SpatialIndex(inside, reach).counts(inside.coords, reach)
        if counts.max() > params.k0 - 1:
            return False
    return True


def resample_success_floor(M: float) -> float:
    """Per-box success probability 2^{-M-1} guaranteed for resampled sparse boxes."""
    return 2.0 ** (-M - 1)


def resample_success_threshold(d: int, k0: int) -> float:
    """Smallest M for which that guarantee is claimed: 2 kappa_d^{k0-1} 2^{k0(d^2+1)} k0^{k0}."""
    return 2 * unit_ball_volume(d) ** (k0 - 1) * 2 ** (k0 * (d * d + 1)) * k0**k0


def sparse_resample(P: PointSet, P_prime: PointSet, params: RegimeParams, key: StreamKey | None = None) -> tuple[PointSet, SprinkleReport]:
    """Replace the content of every bad box by the content of P' there."""
    grid = sparse_grid(params)
    bad = sparse_bad_boxes(P, params, grid)
    out = resample_boxes(P, P_prime, set(bad.tolist()), grid)
    holds = sparse_box_target(P_prime, bad, params, grid)
    owner = grid.box_of(P_prime.coords)
    inserted = P_prime.take(np.flatnonzero(np.isin(owner, bad)))
    details = {"boxes": grid.n_boxes, "per_axis": grid.per_axis, "bad_boxes": bad.tolist()}
    return out, SprinkleReport(int(bad.size), inserted, holds, float("nan"), float("nan"), details)


# ---------------------------------------------------------- dense resampling


def dense_grid(params: RegimeParams) -> GridSpec:
    per_axis = max(2, int(round(params.dense_speed ** (1.0 / params.d))))
    return GridSpec(params.d, per_axis)


def dense_scores(phi: PointSet, params: RegimeParams, queries: np.ndarray | None = None) -> np.ndarray:
    """(n kappa_d R_k^d - a_n - s0)_+ for the query rows (default: all points), R_k within phi."""
    params.require("a_n")
    q = phi.coords if queries is None else queries
    if q.shape[0] == 0:
        return np.empty(0)
    if len(phi) == 0:
        return np.full(q.shape[0], np.inf)
    R = knn_distances(phi, params.k, q)[:, params.k - 1]
    v = params.n * unit_ball_volume(params.d) * R**params.d - params.a_n - params.s0
    return np.maximum(v, 0.0)


def dense_bounded_check(phi: PointSet, box: int, params: RegimeParams, M: float, grid: GridSpec | None = None) -> bool:
    """True iff no point of phi in the box has dense score above M."""
    grid = grid or dense_grid(params)
    inside = phi.coords[grid.box_of(phi.coords) == box]
    if inside.shape[0] == 0:
        return True
    return bool(np.all(dense_scores(phi, params, inside) <= M))


def goodness_threshold(count: int, M: float) -> float:
    """exp(-M 2^{-1-count}) for count = #{s in N+(i): s <= j}."""
    return math.exp(-M * 2.0 ** (-1 - count))


def critical_radius(params: RegimeParams, M: float) -> float:
    """Radius beyond which a k-NN radius makes the dense score exceed M."""
    t = (M + params.a_n + params.s0) / (params.n * unit_ball_volume(params.d))
    return max(t, 0.0) ** (1.0 / params.d)


@dataclass
class BoxState:
    box_index: int
    source: str = "original"
    bounded: bool = True
    good: bool = True
    estimate: float = 1.0
    threshold: float = 0.0
    se: float = 0.0
    good_prime: bool | None = None
    interior_bounded: bool | None = None

    CSV_FIELDS = ("box_index", "source", "bounded", "good", "estimate", "threshold")

    def row(self) -> list:
        return [self.box_index, self.source, self.bounded, self.good, self.estimate, self.threshold]


class DenseResampleState:
    """Configurations and the decisions fixed so far in the sequential walk."""

    def __init__(self, P: PointSet, P_prime: PointSet, params: RegimeParams, M: float | None = None):
        params.require("a_n")
        self.P, self.P_prime, self.params = P, P_prime, params
        self.M = params.M if M is None else M
        if self.M is None:
            raise ValueError("missing required parameter: M")
        self.grid = dense_grid(params)
        self.owner_P = self.grid.box_of(P.coords)
        self.owner_Pp = self.grid.box_of(P_prime.coords)
        self.fixed: dict[int, str] = {}  # box -> "P" or "P'"
        r = critical_radius(params, self.M)
        self.reach = max(1, int(math.ceil(r / self.grid.side - 1e-12)))
        self.local = self.reach <= 1

    def content(self, box: int, source: str) -> np.ndarray:
        if source == "P":
            return self.P.coords[self.owner_P == box]
        return self.P_prime.coords[self.owner_Pp == box]

    def relevant(self, i: int) -> list[int]:
        return self.grid.within(i, self.reach)

    def count_fixed(self, i: int, j: int) -> int:
        return sum(1 for s in self.grid.neighbors(i) if s <= j)


def dense_goodness_estimate(j: int, i: int, state: DenseResampleState, params: RegimeParams, samples: int, key: StreamKey, eta: str = "P") -> tuple[float, float, float]:
    """Monte Carlo estimate of the probability that box i is bounded given the first j boxes.

    Boxes before j hold their fixed content, box j holds ``eta``'s content
    and every later box within reach is redrawn as fresh Poisson content.
    Returns (estimate, threshold b, standard error); the estimate is exact
    when no redrawn box can influence box i.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    grid, M = state.grid, state.M
    b = goodness_threshold(state.count_fixed(i, j), M)
    fixed_parts, free = [], []
    for s in state.relevant(i):
        if s < j:
            fixed_parts.append(state.content(s, state.fixed[s]))
        elif s == j:
            fixed_parts.append(state.content(s, eta))
        else:
            free.append(s)
    base = np.concatenate(fixed_parts) if fixed_parts else np.empty((0, params.d))

    def bounded(coords):
        phi = PointSet(coords, params.d)
        inside = coords[grid.box_of(coords) == i] if len(coords) else coords
        if inside.shape[0] == 0:
            return True
        return bool(np.all(dense_scores(phi, params, inside) <= M))

    if not free:
        return float(bounded(base)), b, 0.0
    rng = key.rng()
    hits = 0
    for _ in range(samples):
        parts = [base]
        for s in free:
            cnt = int(rng.poisson(params.n * grid.volume))
            parts.append(grid.lower_corner(s) + rng.random((cnt, params.d)) * grid.side)
        hits += bounded(np.concatenate(parts))
    p = hits / samples
    return p, b, math.sqrt(p * (1 - p) / samples)


def _box_goodness(j: int, state: DenseResampleState, params: RegimeParams, samples: int, key: StreamKey, eta: str):
    """Goodness of box j for ``eta``; returns (good, binding estimate, its 1 - b, se)."""
    worst = (True, 1.0, 0.0, 0.0, math.inf)
    for i in state.grid.neighbors(j):
        est, b, se = dense_goodness_estimate(j, i, state, params, samples, key.child(f"{eta}/{j}/{i}"), eta)
        margin = est - (1 - b)
        if margin < worst[4]:
            worst = (margin >= 0, est, 1 - b, se, margin)
    return worst[0], worst[1], worst[2], worst[3]


def boundary_distance(coords: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Distance from each point to the boundary of the box containing it."""
    if coords.shape[0] == 0:
        return np.empty(0)
    lower = np.floor(np.clip(coords * grid.per_axis, 0, grid.per_axis - 1)) * grid.side
    off = coords - lower
    return np.minimum(off, grid.side - off).min(axis=1)


def shell_width(params: RegimeParams, w_n: float | None = None) -> float:
    """t_n = ((a_n + w_n) / (n kappa_d))^{1/d}, w_n defaulting to a_n / log a_n."""
    a = params.a_n
    if w_n is None:
        w_n = a / math.log(a) if a > 1 else a
    return ((a + w_n) / (params.n * unit_ball_volume(params.d))) ** (1.0 / params.d)


def dense_sequential_resample(P: PointSet, P_prime: PointSet, params: RegimeParams, samples: int, key: StreamKey, w_n: float | None = None):
    """Walk the boxes in row-major order and resample the bad ones from P'.

    Returns (P'', box states, report). ``report.target_event_holds`` is the
    realized E* indicator and ``details['all_bounded']`` the exhaustive
    boundedness recheck of P''.
    """
    params.require("M", "M0")
    state = DenseResampleState(P, P_prime, params)
    grid = state.grid
    t_n = shell_width(params, w_n)
    # interior boundedness of P' is measured against the whole of P'
    pp_scores = dense_scores(P_prime, params)
    pp_interior = boundary_distance(P_prime.coords, grid) > t_n
    states, estar, bad = [], True, []
    for j in range(grid.n_boxes):
        good, est, thr, se = _box_goodness(j, state, params, samples, key, "P")
        st = BoxState(j, "original", True, good, est, thr, se)
        if good:
            state.fixed[j] = "P"
        else:
            bad.append(j)
            state.fixed[j] = "P'"
            st.source = "resampled"
            g2, est2, thr2, se2 = _box_goodness(j, state, params, samples, key, "P'")
            mask = (state.owner_Pp == j) & pp_interior
            eb = bool(np.all(pp_scores[mask] <= params.M0))
            st.good_prime, st.interior_bounded = g2, eb
            estar = estar and g2 and eb
        states.append(st)
    out = resample_boxes(P, P_prime, set(bad), grid)
    for st in states:
        st.bounded = dense_bounded_check(out, st.box_index, params, state.M, grid)
    all_bounded = all(st.bounded for st in states)
    sc = dense_scores(out, params)
    inserted = P_prime.take(np.flatnonzero(np.isin(state.owner_Pp, bad)))
    report = SprinkleReport(
        len(bad),
        inserted,
        bool(estar),
        float(sc.max()) if sc.size else 0.0,
        dense_H(out, params) - dense_H(P, params),
        {
            "all_bounded": all_bounded,
            "boxes": grid.n_boxes,
            "per_axis": grid.per_axis,
            "local_neighborhood": state.local,
            "bad_boxes": bad,
            "shell_width": t_n,
        },
    )
    return out, states, report


def _resampled_boxes(P: PointSet, P_prime: PointSet, P_dd: PointSet, grid: GridSpec) -> list[int]:
    oa, ob, oc = grid.box_of(P.coords), grid.box_of(P_prime.coords), grid.box_of(P_dd.coords)
    out = []
    for q in range(grid.n_boxes):
        c = P_dd.coords[oc == q]
        if c.shape[0] and np.array_equal(c, P_prime.coords[ob == q]) and not np.array_equal(c, P.coords[oa == q]):
            out.append(q)
    return out


def dense_error_terms(P: PointSet, P_prime: PointSet, P_dd: PointSet, params: RegimeParams, bad_boxes=None, w_n: float | None = None) -> tuple[float, float]:
    """Boundary-shell and bad-box error sums, capped at M and M0 per point.

    ``bad_boxes`` defaults to the boxes whose content in P'' came from P'.
    """
    params.require("M", "M0")
    grid = dense_grid(params)
    if bad_boxes is None:
        bad_boxes = _resampled_boxes(P, P_prime, P_dd, grid)
    if len(P_dd) == 0:
        return 0.0, 0.0
    xi = dense_scores(P_dd, params)
    rho = params.dense_speed
    shell = boundary_distance(P_dd.coords, grid) <= shell_width(params, w_n)
    in_bad = np.isin(grid.box_of(P_dd.coords), np.asarray(list(bad_boxes), dtype=np.int64))
    err_boundary = float(np.sum(np.minimum(params.M, xi[shell]))) / rho
    err_bad = float(np.sum(np.minimum(params.M0, xi[in_bad]))) / rho
    return err_boundary, err_bad


def resample_q_bound(params: RegimeParams) -> float:
    """1 - 3^d 2 k e^{|s0|} (e^{-M0} + e^{-M / 2^{4^d}})."""
    d = params.d
    return 1 - 3**d * 2 * params.k * math.exp(abs(params.s0)) * (math.exp(-params.M0) + math.exp(-params.M / 2 ** (4**d)))
