"""Point configurations on the unit torus and the queries built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .kernels import backend_for


def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the Euclidean unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def canonicalize(coords) -> np.ndarray:
    a = np.mod(np.asarray(coords, dtype=np.float64), 1.0)
    # mod maps tiny negatives to exactly 1.0
    a[a >= 1.0] = 0.0
    return a


@dataclass(frozen=True)
class TorusPoint:
    coords: tuple

    def __post_init__(self):
        c = canonicalize(np.atleast_1d(np.asarray(self.coords, dtype=np.float64)))
        object.__setattr__(self, "coords", tuple(float(v) for v in c))

    @property
    def dim(self) -> int:
        return len(self.coords)


class PointSet:
    """Finite configuration of points on the d-dimensional unit torus.

    Coordinates live in a read-only ``(N, d)`` float array, canonicalized
    into [0, 1).
    """

    __slots__ = ("dim", "coords")

    def __init__(self, coords, dim: int | None = None):
        a = np.asarray(coords, dtype=np.float64)
        if a.size == 0:
            if dim is None:
                dim = a.shape[1] if a.ndim == 2 else None
            if dim is None or dim < 1:
                raise ValueError("an empty PointSet needs an explicit dim")
            a = np.empty((0, dim))
        else:
            if a.ndim == 1:
                a = a[:, None] if dim in (None, 1) else a.reshape(-1, dim)
            if a.ndim != 2:
                raise ValueError("coords must be an (N, d) array")
            if dim is not None and a.shape[1] != dim:
                raise ValueError(f"expected dim {dim}, got {a.shape[1]}")
            a = canonicalize(a)
        a = np.ascontiguousarray(a)
        a.flags.writeable = False
        self.dim = int(a.shape[1])
        self.coords = a

    @classmethod
    def empty(cls, dim: int) -> "PointSet":
        return cls(np.empty((0, dim)), dim)

    @classmethod
    def from_points(cls, points: Iterable, dim: int | None = None) -> "PointSet":
        rows = [p.coords if isinstance(p, TorusPoint) else tuple(np.atleast_1d(p)) for p in points]
        if not rows:
            return cls.empty(dim or 1)
        return cls(np.array(rows, dtype=np.float64), dim)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __getitem__(self, i: int) -> TorusPoint:
        return TorusPoint(tuple(self.coords[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PointSet)
            and self.dim == other.dim
            and np.array_equal(self.coords, other.coords)
        )

    def __repr__(self) -> str:
        return f"PointSet(dim={self.dim}, n={len(self)})"

    def take(self, indices) -> "PointSet":
        return PointSet(self.coords[np.asarray(indices, dtype=np.int64)], self.dim)

    def union(self, *others: "PointSet") -> "PointSet":
        for o in others:
            if o.dim != self.dim:
                raise ValueError("dimension mismatch")
        return PointSet(np.concatenate([self.coords] + [o.coords for o in others]), self.dim)

    def to_csv(self) -> str:
        lines = [f"dim={self.dim}"]
        lines += [",".join(f"{v:.17g}" for v in row) for row in self.coords]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "PointSet":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or not lines[0].startswith("dim="):
            raise ValueError("PointSet CSV must start with a 'dim=d' header")
        dim = int(lines[0][4:])
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
        if any(len(r) != dim for r in rows):
            raise ValueError("row length does not match dim")
        return cls(np.array(rows, dtype=np.float64).reshape(-1, dim), dim)


def as_pointset(phi, dim: int | None = None) -> PointSet:
    if isinstance(phi, PointSet):
        return phi
    return PointSet(phi, dim)


def _as_coords(x, dim: int | None = None) -> np.ndarray:
    if isinstance(x, TorusPoint):
        a = np.asarray(x.coords, dtype=np.float64)
    else:
        a = canonicalize(np.atleast_1d(np.asarray(x, dtype=np.float64)))
    if dim is not None and a.shape[-1] != dim:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {dim}")
    return a


def torus_distance(x, y) -> float:
    """Toroidal distance min over integer shifts z of |x - y + z|."""
    a, b = _as_coords(x), _as_coords(y)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    s = 0.0
    for u, v in zip(a.tolist(), b.tolist()):
        t = abs(u - v)
        t = min(t, 1.0 - t)
        s += t * t
    return math.sqrt(s)


def pairwise_distances(coords, period: float | None = None) -> np.ndarray:
    """Distance matrix of an (m, d) array; torus of side ``period`` if given."""
    c = np.asarray(coords, dtype=np.float64)
    diff = np.abs(c[:, None, :] - c[None, :, :])
    if period is not None:
        diff = np.minimum(diff, period - diff)
    return np.sqrt((diff * diff).sum(axis=-1))


def _grid_cells(cell_side: float, n: int, d: int) -> int:
    # cap the cell count near the point count so building stays O(N)
    cap = max(1, int(math.floor((4 * max(n, 1)) ** (1.0 / d))))
    cap = min(cap, max(1, int((1 << 22) ** (1.0 / d))))
    if not cell_side > 0 or not math.isfinite(cell_side):
        return 1
    per_axis = 1.0 / cell_side
    if per_axis >= cap:
        return cap
    return max(1, int(math.floor(per_axis)))


class SpatialIndex:
    """Uniform grid over the torus bucketing the points of ``source``.

    Queries are exact: the grid only prunes candidates.
    """

    def __init__(self, source: PointSet, cell_side: float | None = None):
        self.source = source
        n, d = len(source), source.dim
        if cell_side is None:
            cell_side = 1.0 / math.ceil(max(n, 1) ** (1.0 / d))
        self.cells_per_axis = _grid_cells(cell_side, n, d)
        self.cell_side = 1.0 / self.cells_per_axis
        self._k = backend_for(d)
        self._order, self._start = self._k.build_grid(source.coords, self.cells_per_axis)

    @property
    def buckets(self) -> dict:
        out = {}
        for c in range(len(self._start) - 1):
            lo, hi = self._start[c], self._start[c + 1]
            if hi > lo:
                out[c] = self._order[lo:hi].tolist()
        return out

    def ball(self, center, r: float) -> np.ndarray:
        c = np.ascontiguousarray(_as_coords(center, self.source.dim))
        if r < 0 or math.isnan(r):
            raise ValueError("radius must be >= 0")
        return self._k.ball_query(self.source.coords, self.cells_per_axis, self._order, self._start, c, float(r))

    def counts(self, centers, r: float) -> np.ndarray:
        c = np.ascontiguousarray(np.asarray(centers, dtype=np.float64).reshape(-1, self.source.dim))
        return self._k.ball_counts(self.source.coords, self.cells_per_axis, self._order, self._start, c, float(r))

    def pairs(self, r: float):
        """(pairs, distances) for all i < j within distance r."""
        return self._k.pairs_within(self.source.coords, self.cells_per_axis, self._order, self._start, float(r))

    def knn(self, queries, k: int, exclude_coincident: bool = True) -> np.ndarray:
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, self.source.dim))
        return self._k.knn_dists(
            self.source.coords, self.cells_per_axis, self._order, self._start, q, int(k), bool(exclude_coincident)
        )


def points_in_ball(index: SpatialIndex, center, r: float) -> np.ndarray:
    """Sorted indices of points within closed distance r of center."""
    return index.ball(center, r)


def knn_distances(phi: PointSet, k: int, queries=None) -> np.ndarray:
    """k smallest distances from each query (default: every point of phi).

    Points located exactly at the query are excluded; missing neighbours
    are +inf.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = phi.coords if queries is None else queries
    return SpatialIndex(phi).knn(q, k, exclude_coincident=True)


def knn_radii(phi: PointSet, k: int) -> np.ndarray:
    """R_k of every point of phi with respect to phi."""
    if len(phi) == 0:
        return np.empty(0)
    return knn_distances(phi, k)[:, k - 1]


def knn_radius(x, phi: PointSet, k: int) -> float:
    """k-th smallest distance from x to the points of phi not located at x."""
    c = _as_coords(x, phi.dim)
    return float(knn_distances(phi, k, c[None, :])[0, k - 1])


def contact_distances(probes, phi: PointSet) -> np.ndarray:
    q = np.asarray(probes, dtype=np.float64).reshape(-1, phi.dim)
    if len(phi) == 0:
        return np.full(q.shape[0], np.inf)
    return SpatialIndex(phi).knn(q, 1, exclude_coincident=False)[:, 0]


def contact_distance(x, phi: PointSet) -> float:
    """Distance from x to the nearest point of phi; +inf if phi is empty."""
    c = _as_coords(x, phi.dim)
    return float(contact_distances(c[None, :], phi)[0])


def component_labels(phi: PointSet, r: float) -> np.ndarray:
    """Component label per point for the geometric graph with edges at distance <= r."""
    if r < 0:
        raise ValueError("radius must be >= 0")
    n = len(phi)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    idx = SpatialIndex(phi, r if r > 0 else None)
    pairs, _ = idx.pairs(r)
    return idx._k.component_labels(n, np.ascontiguousarray(pairs))


def connected_components(phi: PointSet, r: float) -> list[np.ndarray]:
    """Components as sorted index arrays, ordered by their smallest index."""
    labels = component_labels(phi, r)
    if labels.size == 0:
        return []
    order = np.argsort(labels, kind="stable")
    cuts = np.flatnonzero(np.diff(labels[order])) + 1
    return np.split(order, cuts)


def diameter(phi, metric: str = "torus") -> float:
    """Largest pairwise distance, toroidal or between canonical representatives."""
    coords = phi.coords if isinstance(phi, PointSet) else np.asarray(phi, dtype=np.float64)
    if coords.shape[0] < 2:
        raise ValueError("diameter needs at least 2 points")
    if metric == "torus":
        D = pairwise_distances(coords, period=1.0)
    elif metric == "euclidean":
        D = pairwise_distances(coords)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return float(D.max())


def distances_to(x, points: Sequence) -> np.ndarray:
    """Torus distances from x to each row of ``points`` (linear scan)."""
    c = _as_coords(x)
    p = np.asarray(points, dtype=np.float64).reshape(-1, c.shape[0])
    t = np.abs(p - c)
    t = np.minimum(t, 1.0 - t)
    s = np.zeros(p.shape[0])
    for i in range(c.shape[0]):
        s = s + t[:, i] * t[:, i]
    return np.sqrt(s)
