"""Seeded Poisson processes on the torus and the couplings built from them."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointSet
from .streams import StreamKey

# below this mean the count is drawn by sequential inversion of the cdf;
# above it numpy's PTRS transformed-rejection sampler is used
INVERSION_LIMIT = 30.0


def poisson_count(mean: float, rng: np.random.Generator) -> int:
    """Draw a Poisson(mean) count."""
    if mean < 0 or not math.isfinite(mean):
        raise ValueError("Poisson mean must be finite and >= 0")
    if mean == 0:
        return 0
    if mean >= INVERSION_LIMIT:
        return int(rng.poisson(mean))
    u = rng.random()
    k, p = 0, math.exp(-mean)
    cdf = p
    while u >= cdf:
        k += 1
        p *= mean / k
        if p == 0.0:
            break
        cdf += p
    return k


def sample_poisson(n: float, d: int, key: StreamKey) -> PointSet:
    """Poisson process of intensity n on the d-dimensional unit torus."""
    rng = key.rng()
    count = poisson_count(n, rng)
    return PointSet(rng.random((count, d)), d)


def thin_mask(count: int, survival_p: float, key: StreamKey) -> np.ndarray:
    if not 0.0 <= survival_p <= 1.0:
        raise ValueError("survival probability must lie in [0, 1]")
    return key.rng().random(count) < survival_p


def thin(phi: PointSet, survival_p: float, key: StreamKey) -> PointSet:
    """Keep each point independently with probability survival_p."""
    return phi.take(np.flatnonzero(thin_mask(len(phi), survival_p, key)))


@dataclass(frozen=True)
class CriticalCoupling:
    base: PointSet
    thinned: PointSet
    sprinkle: PointSet
    union: PointSet
    retained: np.ndarray  # mask over base marking the thinned points


def sample_critical_coupling(n: float, d: int, M: float, key: StreamKey, base: PointSet | None = None) -> CriticalCoupling:
    """Thin with survival 1 - 1/M and add an independent Poisson(n/M) sprinkle.

    ``base`` may be passed to re-draw the coupling conditionally on a fixed
    configuration.
    """
    if not M > 1:
        raise ValueError("M must exceed 1")
    if base is None:
        base = sample_poisson(n, d, key.child("base"))
    retained = thin_mask(len(base), 1.0 - 1.0 / M, key.child("thin"))
    thinned = base.take(np.flatnonzero(retained))
    sprinkle = sample_poisson(n / M, d, key.child("sprinkle"))
    return CriticalCoupling(base, thinned, sprinkle, thinned.union(sprinkle), retained)


@dataclass(frozen=True)
class GridSpec:
    """Partition of the torus into per_axis**dim congruent boxes, row-major order."""

    dim: int
    per_axis: int

    def __post_init__(self):
        if not isinstance(self.per_axis, (int, np.integer)) or self.per_axis < 1:
            raise ValueError("per-axis box count must be a positive integer")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @classmethod
    def from_count(cls, boxes: float, dim: int) -> "GridSpec":
        """Grid with about ``boxes`` boxes: per-axis count rounded, at least 1."""
        return cls(dim, max(1, int(round(boxes ** (1.0 / dim)))))

    @property
    def n_boxes(self) -> int:
        return self.per_axis**self.dim

    @property
    def side(self) -> float:
        return 1.0 / self.per_axis

    @property
    def volume(self) -> float:
        return self.side**self.dim

    def cell(self, j: int) -> tuple:
        out = []
        for _ in range(self.dim):
            out.append(j % self.per_axis)
            j //= self.per_axis
        return tuple(reversed(out))

    def index(self, cell) -> int:
        j = 0
        for c in cell:
            j = j * self.per_axis + (int(c) % self.per_axis)
        return j

    def lower_corner(self, j: int) -> np.ndarray:
        return np.array(self.cell(j), dtype=np.float64) * self.side

    def box_of(self, coords) -> np.ndarray:
        """Box index of each row of an (N, dim) coordinate array."""
        c = np.clip((np.asarray(coords) * self.per_axis).astype(np.int64), 0, self.per_axis - 1)
        flat = np.zeros(c.shape[0], dtype=np.int64)
        for i in range(self.dim):
            flat = flat * self.per_axis + c[:, i]
        return flat

    def neighbors(self, j: int, include_self: bool = True) -> list[int]:
        """Boxes sharing at least a corner with box j on the torus, ascending."""
        base = self.cell(j)
        out = set()
        for off in itertools.product((-1, 0, 1), repeat=self.dim):
            out.add(self.index(tuple(b + o for b, o in zip(base, off))))
        if not include_self:
            out.discard(j)
        return sorted(out)

    def within(self, j: int, reach: int) -> list[int]:
        """Boxes whose cell offset from j is at most ``reach`` along every axis."""
        base = self.cell(j)
        span = range(-reach, reach + 1)
        return sorted({self.index(tuple(b + o for b, o in zip(base, off))) for off in itertools.product(span, repeat=self.dim)})

    def cell_counts(self, phi: PointSet) -> np.ndarray:
        return np.bincount(self.box_of(phi.coords), minlength=self.n_boxes)


def resample_boxes(P: PointSet, P_prime: PointSet, boxes_to_replace, grid: GridSpec) -> PointSet:
    """P outside the replaced boxes joined with P' inside them."""
    if P.dim != P_prime.dim or P.dim != grid.dim:
        raise ValueError("dimension mismatch")
    replace = np.zeros(grid.n_boxes, dtype=bool)
    idx = np.asarray(sorted(boxes_to_replace), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= grid.n_boxes):
        raise ValueError("box index outside the grid")
    replace[idx] = True
    keep = P.take(np.flatnonzero(~replace[grid.box_of(P.coords)]))
    fresh = P_prime.take(np.flatnonzero(replace[grid.box_of(P_prime.coords)]))
    return keep.union(fresh)


def bernoulli_decisions(grid: GridSpec, eps: float, key: StreamKey) -> set:
    """Boxes selected independently with probability eps."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    return set(np.flatnonzero(key.rng().random(grid.n_boxes) < eps).tolist())
