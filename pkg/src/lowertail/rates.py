"""Entropy rate functions, T-maps and the tilt solver with a brute-force oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .functionals import DiscreteMeasure
from .streams import StreamKey


def mu_clique(d: int, k0: int, samples: int, key: StreamKey) -> tuple[float, float]:
    """Monte Carlo value of v/k0!, v the volume of k0-configurations at the origin that form a unit clique.

    Returns (estimate, standard error); k0 = 1 is exactly 1.
    """
    if k0 < 1:
        raise ValueError("k0 must be >= 1")
    if k0 == 1:
        return 1.0, 0.0
    if samples < 2:
        raise ValueError("samples must be >= 2")
    rng = key.rng()
    # every other point lies within distance 1 of the origin, so [-1, 1]^d suffices
    pts = rng.uniform(-1.0, 1.0, size=(samples, k0 - 1, d))
    ok = np.sum(pts * pts, axis=2) <= 1.0
    ok = np.all(ok, axis=1)
    for a in range(k0 - 1):
        for b in range(a + 1, k0 - 1):
            diff = pts[:, a, :] - pts[:, b, :]
            ok &= np.sum(diff * diff, axis=1) <= 1.0
    scale = 2.0 ** (d * (k0 - 1)) / math.factorial(k0)
    p = float(ok.mean())
    return scale * p, scale * math.sqrt(p * (1 - p) / samples)


def sparse_clique_rate(a: float, mu: float) -> float:
    """a log(a/mu) - a + mu below mu, zero from mu on."""
    if not mu > 0:
        raise ValueError("mu must be > 0")
    if a < 0:
        raise ValueError("a must be >= 0")
    if a >= mu:
        return 0.0
    if a == 0:
        return mu
    return a * math.log(a / mu) - a + mu


# ------------------------------------------------------------- dense rate


def _tau_mass(k: int, s0: float) -> float:
    # the reference measure has density e^{-x}/(k-1)! on [s0, inf)
    return math.exp(-s0) / math.factorial(k - 1)


def tilt_constraint(theta: float, k: int, s0: float) -> float:
    """T of the tilted measure e^{-theta (x - s0)} tau(dx)."""
    return _tau_mass(k, s0) / (1.0 + theta) ** 2


def tilt_entropy(theta: float, k: int, s0: float) -> float:
    """Relative entropy of the tilted measure with respect to tau."""
    C = _tau_mass(k, s0)
    # C (1 - 1/(1+theta) - theta/(1+theta)^2) after simplification
    return C * theta * theta / (1.0 + theta) ** 2


@dataclass
class TiltSolution:
    theta: float
    constraint_value: float
    rate: float
    converged: bool
    iterations: int = 0


def dense_rate(a: float, k: int = 1, s0: float = 0.0, tol: float = 1e-10, max_iter: int = 200) -> TiltSolution:
    """Minimal relative entropy under T <= a, found by bisection over the tilt parameter."""
    if not a > 0:
        raise ValueError("a must be > 0")
    if k < 1:
        raise ValueError("k must be >= 1")
    T0 = tilt_constraint(0.0, k, s0)
    if a >= T0:
        return TiltSolution(0.0, T0, 0.0, True, 0)
    lo, hi = 0.0, 1.0
    while tilt_constraint(hi, k, s0) > a:
        hi *= 2.0
    it, theta, val = 0, hi, tilt_constraint(hi, k, s0)
    for it in range(1, max_iter + 1):
        theta = 0.5 * (lo + hi)
        val = tilt_constraint(theta, k, s0)
        if abs(val - a) <= tol:
            break
        if val > a:
            lo = theta
        else:
            hi = theta
    converged = abs(val - a) <= tol
    return TiltSolution(theta, val, tilt_entropy(theta, k, s0), converged, it)


def dense_rate_closed_form(a: float, k: int = 1, s0: float = 0.0) -> float:
    """(sqrt(C) - sqrt(a))^2 for a < C, zero otherwise, with C the total T of tau."""
    C = _tau_mass(k, s0)
    if a >= C:
        return 0.0
    return (math.sqrt(C) - math.sqrt(a)) ** 2


class SolverDivergence(RuntimeError):
    pass


def _entropy(u: np.ndarray, tau: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        ulogu = np.where(u > 0, u * np.log(u), 0.0)
    return float(np.sum(tau * (ulogu - u + 1.0)))


def _project(y: np.ndarray, u: np.ndarray, x: np.ndarray, c: np.ndarray, a: float, floor: float) -> np.ndarray:
    """Projection onto {w >= floor, c.w <= a} in the metric weighted by tau/u."""
    w = np.maximum(floor, y)
    if float(c @ w) <= a:
        return w
    lo, hi = 0.0, 1.0
    while float(c @ np.maximum(floor, y - hi * u * x)) > a:
        hi *= 2.0
        if hi > 1e300:
            raise SolverDivergence("projection multiplier unbounded")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(c @ np.maximum(floor, y - mid * u * x)) > a:
            lo = mid
        else:
            hi = mid
    return np.maximum(floor, y - hi * u * x)


def dense_rate_bruteforce(a: float, k: int = 1, s0: float = 0.0, grid_points: int = 2000, domain_cap: float = 40.0,
                          max_iter: int = 20000, tol: float = 1e-13) -> float:
    """Discretized entropy minimization by scaled projected gradient descent.

    The half-line [s0, s0 + domain_cap] is cut into ``grid_points`` cells; each
    cell becomes an atom at its midpoint carrying the exact tau-mass of the
    cell. Working in the density u = rho/tau, each step moves
    u -> u (1 - eta log u), projects onto the constraint in the tau/u metric
    and halves eta until an Armijo decrease holds.
    """
    if grid_points < 10:
        raise ValueError("grid_points must be >= 10")
    if not a > 0:
        raise ValueError("a must be > 0")
    C = _tau_mass(k, s0)
    edges = np.linspace(0.0, domain_cap, grid_points + 1)
    x = 0.5 * (edges[:-1] + edges[1:])
    tau = C * (np.exp(-edges[:-1]) - np.exp(-edges[1:]))
    c = tau * x
    floor = 1e-12
    T = float(c.sum())
    u = np.full(grid_points, min(1.0, a / T))
    f = _entropy(u, tau)
    eta = 1.0
    for _ in range(max_iter):
        g = np.log(u)
        while True:
            w = _project(u * (1.0 - eta * g), u, x, c, a, floor)
            fw = _entropy(w, tau)
            if fw <= f + 1e-4 * float(np.sum(tau * g * (w - u))):
                break
            eta *= 0.5
            if eta < 1e-20:
                raise SolverDivergence("step size collapsed")
        done = f - fw <= tol * max(1.0, abs(f))
        u, f = w, fw
        eta = min(1.0, 2.0 * eta)
        if done:
            break
    return f


def critical_rate(*args, **kwargs):
    """Not evaluated: the critical rate is an infimum over laws of stationary point
    processes, which has no finite parametrization to optimize over."""
    raise NotImplementedError("the critical-regime rate function is not evaluated")


# ------------------------------------------------------------------ T-maps


def T_map(measure: DiscreteMeasure, variant: str = "sparse", s0: float = 0.0, M: float = math.inf) -> float:
    """Linear statistic of a discrete measure.

    ``sparse``: sum of x; ``dense``: sum of x - s0; ``dense_truncated``: sum
    of min(x - s0, M). Dense variants require atoms at or above s0.
    """
    x, m = measure.locations, measure.masses
    if variant == "sparse":
        return float(np.sum(x * m))
    if variant not in ("dense", "dense_truncated"):
        raise ValueError(f"unknown variant {variant!r}")
    if np.any(x < s0):
        raise ValueError("dense T-maps need atoms in [s0, inf)")
    y = x - s0
    if variant == "dense_truncated":
        y = np.minimum(y, M)
    return float(np.sum(y * m))


def knn_tail_probability(a: float, k: int) -> float:
    """P(Poisson(a) <= k - 1)."""
    if not a > 0 or k < 1:
        raise ValueError("need a > 0 and k >= 1")
    term, total = 1.0, 1.0
    for i in range(1, k):
        term *= a / i
        total += term
    return total * math.exp(-a)


def knn_tail_shifted_powers(a: float, k: int) -> float:
    """The same sum with a^{i-1} in place of a^i; kept to quantify the difference."""
    if not a > 0 or k < 1:
        raise ValueError("need a > 0 and k >= 1")
    return sum(a ** (i - 1) / math.factorial(i) for i in range(k)) * math.exp(-a)
