"""Service-time models for heterogeneous and unstable workers.

Every model describes the time a worker needs per unit of work.  A task of
``w`` units takes ``w`` times one draw (worker-dependent scaling), so the same
profile serves any CU size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def mean(self):
        return 1.0 / self.rate

    def second_moment(self):
        return 2.0 / self.rate ** 2


@dataclass(frozen=True)
class ShiftedExponential:
    delta: float
    rate: float

    def __post_init__(self):
        if self.delta < 0 or self.rate <= 0:
            raise ValueError("need delta >= 0 and rate > 0")

    def sample(self, rng, size=None):
        return self.delta + rng.exponential(1.0 / self.rate, size)

    def mean(self):
        return self.delta + 1.0 / self.rate

    def second_moment(self):
        return self.delta ** 2 + 2 * self.delta / self.rate + 2.0 / self.rate ** 2


@dataclass(frozen=True)
class Pareto:
    """Classical Pareto with minimum ``scale``; infinite variance for shape <= 2."""

    shape: float
    scale: float

    def sample(self, rng, size=None):
        return self.scale * (1.0 + rng.pareto(self.shape, size))

    def mean(self):
        return math.inf if self.shape <= 1 else self.shape * self.scale / (self.shape - 1)

    def second_moment(self):
        if self.shape <= 2:
            return math.inf
        return self.shape * self.scale ** 2 / (self.shape - 2)


@dataclass(frozen=True)
class TwoPoint:
    """t_slow with probability p, else t_fast (link break and recover)."""

    p: float
    t_fast: float
    t_slow: float

    def sample(self, rng, size=None):
        slow = rng.random(size) < self.p
        return np.where(slow, self.t_slow, self.t_fast) if size is not None else (
            self.t_slow if slow else self.t_fast)

    def mean(self):
        return self.p * self.t_slow + (1 - self.p) * self.t_fast

    def second_moment(self):
        return self.p * self.t_slow ** 2 + (1 - self.p) * self.t_fast ** 2


@dataclass(frozen=True)
class Mixture:
    weights: tuple
    components: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.components) or abs(sum(self.weights) - 1) > 1e-12:
            raise ValueError("mixture weights must match components and sum to 1")
        object.__setattr__(self, "_cdf", np.cumsum(self.weights))

    def sample(self, rng, size=None):
        if size is None:
            u = rng.random()
            i = min(int(np.searchsorted(self._cdf, u, side="right")), len(self.components) - 1)
            return self.components[i].sample(rng)
        idx = np.minimum(np.searchsorted(self._cdf, rng.random(size), side="right"),
                         len(self.components) - 1)
        out = np.empty(size)
        for i, comp in enumerate(self.components):
            mask = idx == i
            n = int(mask.sum())
            if n:
                out[mask] = comp.sample(rng, n)
        return out

    def mean(self):
        return sum(w * c.mean() for w, c in zip(self.weights, self.components) if w > 0)

    def second_moment(self):
        return sum(w * c.second_moment() for w, c in zip(self.weights, self.components) if w > 0)


def gamma_per_cu(rate: float) -> Exponential:
    return Exponential(rate)


def unstable1(rate: float, p_heavy: float = 0.05, shape: float = 1.5, scale_factor: float = 5.0):
    """Exponential mixed with a Pareto tail of scale ``scale_factor / rate``."""
    return Mixture((1 - p_heavy, p_heavy), (Exponential(rate), Pareto(shape, scale_factor / rate)))


def unstable2(rate: float, p_heavy: float = 0.05, slow_factor: float = 20.0):
    """Exponential (mean t_fast) mixed with a blocked state lasting slow_factor * t_fast."""
    t_fast = 1.0 / rate
    blocked = TwoPoint(1.0, t_fast, slow_factor * t_fast)
    return Mixture((1 - p_heavy, p_heavy), (Exponential(rate), blocked))


@dataclass
class Ewma:
    M: float = math.nan
    V: float = math.nan
    count: int = 0

    @property
    def ready(self):
        return self.count > 0 and math.isfinite(self.M) and self.M > 0


@dataclass
class WorkerProfile:
    id: int
    service: object
    bandwidth: float
    ewma: Ewma = field(default_factory=Ewma)
    alive: bool = True

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def speed(self) -> float:
        """Units of work per time unit, by the true model mean."""
        return 1.0 / self.service.mean()

    def moments(self, use_estimates: bool = True):
        """(E[t], E[t^2]) per unit of work, from EWMA when warmed up."""
        if use_estimates and self.ewma.ready:
            return self.ewma.M, self.ewma.V
        return self.service.mean(), self.service.second_moment()


def sample_model1(profile: WorkerProfile, gamma_share: float, rng) -> float:
    """Worker-dependent scaling: a share gamma takes gamma times one per-unit draw."""
    if gamma_share <= 0:
        raise ValueError("gamma_share must be positive")
    return gamma_share * float(profile.service.sample(rng))


def sample_model2(profile: WorkerProfile, cu_count: int, rng, cu_work: float = 1.0) -> float:
    """Additive scaling: sum of cu_count independent CU times of ``cu_work`` units each."""
    if cu_count < 1:
        raise ValueError("cu_count must be at least 1")
    svc = profile.service
    if isinstance(svc, Exponential):
        return float(rng.gamma(cu_count, cu_work / svc.rate))
    return cu_work * float(np.sum(svc.sample(rng, cu_count)))


def sample_unstable(profile: WorkerProfile, rng) -> float:
    return float(profile.service.sample(rng))


def ewma_update(profile: WorkerProfile, observed: float, alpha: float, beta: float) -> WorkerProfile:
    if not (0 <= alpha < 1 and 0 <= beta < 1):
        raise ValueError("alpha and beta must lie in [0, 1)")
    e = profile.ewma
    if e.count == 0:
        e.M, e.V = observed, observed * observed
    else:
        e.M = alpha * e.M + (1 - alpha) * observed
        e.V = beta * e.V + (1 - beta) * observed * observed
    e.count += 1
    return profile


def make_model(kind: str, rate: float, delta: float = 0.0, **kw):
    """Build a per-unit-work service model from a fleet entry."""
    if kind in ("exponential", "gamma_per_cu"):
        return Exponential(rate)
    if kind == "shifted_exponential":
        return ShiftedExponential(delta, rate)
    if kind == "pareto":
        return Pareto(kw.get("shape", 1.5), kw.get("scale_factor", 5.0) / rate)
    if kind == "unstable1":
        return unstable1(rate, kw.get("p_heavy", 0.05), kw.get("shape", 1.5), kw.get("scale_factor", 5.0))
    if kind == "unstable2":
        return unstable2(rate, kw.get("p_heavy", 0.05), kw.get("slow_factor", 20.0))
    if kind == "deterministic":
        return TwoPoint(0.0, 1.0 / rate, 1.0 / rate)
    raise ValueError(f"unknown service model {kind!r}")


MODEL_KINDS = ("exponential", "gamma_per_cu", "shifted_exponential", "pareto",
               "unstable1", "unstable2", "deterministic")
