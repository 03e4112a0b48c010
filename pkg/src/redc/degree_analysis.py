"""Degree distributions for the rateless matrix code and and-or tree density evolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True, eq=False)
class DegreeDistribution:
    """Probability vector over output degrees 1..K.

    ``omega[d - 1]`` is the probability of degree ``d``.
    """

    omega: np.ndarray
    K: int
    m: int = 1
    k: int = 1
    beta: float = field(init=False)
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        if omega.ndim != 1 or len(omega) != self.K:
            raise ValueError("omega must have length K")
        if np.any(omega < 0):
            raise ValueError("negative probability")
        total = omega.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        degrees = np.arange(1, self.K + 1)
        object.__setattr__(self, "beta", float(degrees @ omega))
        cdf = np.cumsum(omega)
        cdf[-1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def key(self):
        return ("soliton", self.m, self.k) if self.m * self.k == self.K else ("custom", self.K)

    def pmf(self, d: int) -> float:
        if d < 1 or d > self.K:
            return 0.0
        return float(self.omega[d - 1])

    def sample(self, rng) -> int:
        return int(np.searchsorted(self._cdf, rng.random(), side="right")) + 1

    def __call__(self, x):
        """Generating function Omega(x) = sum_d Omega_d x^d."""
        return np.polynomial.polynomial.polyval(x, np.concatenate(([0.0], self.omega)))


def from_weights(weights, m: int = 1, k: int | None = None) -> DegreeDistribution:
    """Normalize nonnegative weights over degrees 1..len(weights)."""
    w = np.asarray(weights, dtype=float)
    K = len(w)
    if k is None:
        k = K // m
    return DegreeDistribution(w / w.sum(), K, m, k)


def soliton_weights(m: int, k: int) -> np.ndarray:
    """Unnormalized modified-soliton weights for degrees 1..m*k."""
    if m < 1 or k < 1:
        raise ValueError("m and k must be positive")
    from sympy import primerange

    K = m * k
    w = np.zeros(K)
    w[0] = 1.0 / K
    if K >= 2:
        w[1] = 0.5
    d = np.arange(3, K + 1, dtype=float)
    w[2:] = 1.0 / (d * (d - 1))
    # primes above max(m, k) can never be split as d' * d'' with d' <= m, d'' <= k
    for p in primerange(int(max(m, k)) + 1, int(K) + 1):
        w[p - 1] = 0.0
    return w


def build_modified_soliton(m: int, k: int) -> DegreeDistribution:
    return _soliton(int(m), int(k))


@lru_cache(maxsize=256)
def _soliton(m, k):
    w = soliton_weights(m, k)
    return DegreeDistribution(w / w.sum(), m * k, m, k)


def edge_perspective(dist: DegreeDistribution) -> np.ndarray:
    """Coefficients of omega(x) = sum_d omega_d x^(d-1), with omega_d = d * Omega_d / beta."""
    d = np.arange(1, dist.K + 1)
    return d * dist.omega / dist.beta


def input_edge_dist(alpha: float):
    """lambda(x) = exp(-alpha (1 - x)), the Poisson limit of the input-node edge degree."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return lambda x: np.exp(-alpha * (1.0 - x))


@dataclass
class EvolutionResult:
    y_trace: np.ndarray
    converged_to: float
    converged: bool
    threshold: float | None = None

    @property
    def iterations(self) -> int:
        return len(self.y_trace) - 1


def evolve(dist: DegreeDistribution, alpha: float, delta: float = 1.0,
           max_iters: int = 1000, tol: float = 1e-10) -> EvolutionResult:
    """Iterate y_l = delta * lambda(1 - omega(1 - y_{l-1})) from y_0 = delta."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    coeffs = edge_perspective(dist)
    support = np.nonzero(coeffs)[0]
    c, powers = coeffs[support], support.astype(float)
    lam = input_edge_dist(alpha)

    def omega_edge(x):
        return float(c @ np.power(x, powers))

    trace = [float(delta)]
    y = float(delta)
    converged = False
    for _ in range(max_iters):
        y_new = float(delta * lam(1.0 - omega_edge(1.0 - y)))
        y_new = min(max(y_new, 0.0), 1.0)
        trace.append(y_new)
        if abs(y_new - y) < tol:
            converged = True
            y = y_new
            break
        y = y_new
    return EvolutionResult(np.array(trace), y, converged)


def _limit(dist, eps, max_iters, tol):
    return evolve(dist, dist.beta * (1.0 + eps), 1.0, max_iters, tol).converged_to


def threshold_bisect(dist: DegreeDistribution, beta: float | None = None, tol: float = 1e-4,
                     y_target: float | None = None, max_iters: int = 1000,
                     eps_max: float = 64.0) -> float:
    """Bisect for the smallest overhead eps whose evolved limit meets ``y_target``.

    ``y_target`` defaults to 1/K, i.e. fewer than one source expected to stay unrecovered.
    The bracket starts at [0, 1] and doubles its upper end while the top still fails;
    returns inf if even ``eps_max`` fails.  The returned midpoint is within tol/2 of both
    bracket ends.
    """
    lo, hi = threshold_bracket(dist, beta, tol, y_target, max_iters, eps_max)
    return 0.5 * (lo + hi)


def threshold_bracket(dist, beta=None, tol=1e-4, y_target=None, max_iters=1000, eps_max=64.0):
    if tol <= 0:
        raise ValueError("tol must be positive")
    if beta is None:
        beta = dist.beta
    if y_target is None:
        y_target = 1.0 / dist.K

    def ok(eps):
        return evolve(dist, beta * (1.0 + eps), 1.0, max_iters, 1e-12).converged_to <= y_target

    lo, hi = 0.0, 1.0
    while not ok(hi):
        lo, hi = hi, 2.0 * hi
        if hi > eps_max:
            return math.inf, math.inf
    if ok(lo):
        return 0.0, 0.0
    while hi - lo >= tol:
        eps = 0.5 * (lo + hi)
        if ok(eps):
            hi = eps
        else:
            lo = eps
    return lo, hi


def predicted_overhead(dist: DegreeDistribution, target_success: float = 0.99,
                       step: float = 1e-3, eps_max: float = 4.0,
                       max_iters: int = 1000, tol: float = 1e-10) -> float:
    """Smallest eps on a grid of ``step`` whose evolved unrecovered fraction <= 1 - target."""
    if not 0.0 < target_success < 1.0:
        raise ValueError("target_success must lie in (0, 1)")
    if dist.K == 1:
        # the asymptotic recursion never reaches zero, but any symbol decodes a single source
        return 0.0
    goal = 1.0 - target_success
    n = int(round(eps_max / step))
    # the evolved limit is non-increasing in eps, so binary search the grid
    if _limit(dist, 0.0, max_iters, tol) <= goal:
        return 0.0
    if _limit(dist, n * step, max_iters, tol) > goal:
        return math.inf
    lo, hi = 0, n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _limit(dist, mid * step, max_iters, tol) <= goal:
            hi = mid
        else:
            lo = mid
    return round(hi * step, 12)


@lru_cache(maxsize=256)
def soliton_overhead(m: int, k: int, target_success: float = 0.99) -> float:
    return predicted_overhead(build_modified_soliton(m, k), target_success)
