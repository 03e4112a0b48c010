"""Valid-worker filtering, node-set selection, M/G/1 latency prediction and load splitting.

Time is absolute simulated time; ``upsilon`` is the job arrival rate.  A
worker's job-level service time T_i is the time it would need for all K CUs of
one job, so r_comp = 1 / (upsilon * E[T_i]) is its capacity in jobs per
arrival interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .degree_analysis import build_modified_soliton, soliton_overhead
from .errors import (EmptyValidSet, Infeasible, InsufficientCapacity, NoFeasibleStrategy,
                     UnstableQueue)

STABILITY_MARGIN = 0.999


@dataclass
class NodeRates:
    ids: np.ndarray
    r_comp: np.ndarray
    r_comm: np.ndarray
    a: np.ndarray

    def subset(self, ids) -> "NodeRates":
        pos = {int(i): j for j, i in enumerate(self.ids)}
        idx = [pos[int(i)] for i in ids]
        return NodeRates(self.ids[idx], self.r_comp[idx], self.r_comm[idx], self.a[idx])

    def __len__(self):
        return len(self.ids)


def node_rates(ids, mean_T, second_T, bandwidth, D_in, D_out, upsilon) -> NodeRates:
    """Rates from job-level service moments E[T_i], E[T_i^2] and link bandwidths."""
    mean_T = np.asarray(mean_T, dtype=float)
    second_T = np.asarray(second_T, dtype=float)
    bandwidth = np.asarray(bandwidth, dtype=float)
    return NodeRates(
        np.asarray(ids),
        1.0 / (upsilon * mean_T),
        bandwidth / (upsilon * (D_in + D_out)),
        upsilon * second_T / (2.0 * mean_T),
    )


@dataclass
class Timing:
    """Per-symbol stage times used by the valid-worker filter."""

    T_enc: float
    T_dec: float
    T_in: np.ndarray
    T_out: np.ndarray
    T_w: np.ndarray


def valid_workers(ids, timing: Timing) -> list:
    """Keep worker i iff no codec or link stage is slower than its compute."""
    keep = []
    for j, i in enumerate(ids):
        slowest = max(timing.T_enc, timing.T_dec, timing.T_in[j], timing.T_out[j])
        if slowest <= timing.T_w[j]:
            keep.append(i)
    if not keep:
        raise EmptyValidSet("no worker outpaces its codec and links")
    return keep


def select_node_set(valid, rates: NodeRates, phi: float, eps_dec: float) -> list:
    """Shortest prefix of ``valid`` by descending r_comp whose capacity reaches 1 + phi."""
    if phi < eps_dec:
        raise ValueError(f"phi={phi} below eps_dec={eps_dec}")
    sub = rates.subset(valid)
    # stable sort keeps id order among equal rates
    order = np.argsort(-sub.r_comp, kind="stable")
    total = 0.0
    chosen = []
    for j in order:
        chosen.append(int(sub.ids[j]))
        total += sub.r_comp[j]
        if total >= 1.0 + phi:
            return chosen
    raise InsufficientCapacity(f"aggregate r_comp {total:.4g} below {1 + phi:.4g}")


def pk_latency(r_comp, a, gamma, upsilon):
    """Mean response time of a worker fed at rate upsilon*gamma (Pollaczek-Khinchine)."""
    r_comp, a, gamma = np.asarray(r_comp, float), np.asarray(a, float), np.asarray(gamma, float)
    if np.any(gamma >= r_comp):
        raise UnstableQueue("gamma must stay below r_comp")
    out = (a * gamma / (r_comp - gamma) + 1.0 / r_comp) / upsilon
    return float(out) if out.ndim == 0 else out


def share_latency(rates: NodeRates, gamma, upsilon):
    """Per-worker delay of its gamma share: (1/upsilon)(a g^2/(r-g) + g/r)."""
    gamma = np.asarray(gamma, float)
    if np.any(gamma >= rates.r_comp):
        raise UnstableQueue("gamma must stay below r_comp")
    return (rates.a * gamma ** 2 / (rates.r_comp - gamma) + gamma / rates.r_comp) / upsilon


def predict_job_latency(rates: NodeRates, gamma, upsilon, T_enc, T_dec):
    gamma = np.asarray(gamma, float)
    n = len(gamma)
    L_comp = float(share_latency(rates, gamma, upsilon).sum() / n)
    L_comm = float(np.sum(gamma / (upsilon * rates.r_comm)) / n)
    return L_comp, L_comm, L_comp + L_comm + T_enc + T_dec


def split_objective(rates: NodeRates, gamma) -> float:
    """sum_i a g^2/(r-g) + g (1/r + 1/r_comm); upsilon * I times (L_comp + L_comm)."""
    g = np.asarray(gamma, float)
    if np.any(g >= rates.r_comp) or np.any(g < 0):
        return math.inf
    return float(np.sum(rates.a * g ** 2 / (rates.r_comp - g)
                        + g * (1.0 / rates.r_comp + 1.0 / rates.r_comm)))


def split_gradient(rates: NodeRates, gamma) -> np.ndarray:
    g = np.asarray(gamma, float)
    r, a = rates.r_comp, rates.a
    return a * r ** 2 / (r - g) ** 2 - a + 1.0 / r + 1.0 / rates.r_comm


def _gamma_of_eta(rates, eta, floor):
    r, a, c = rates.r_comp, rates.a, rates.r_comm
    slack = a + eta - 1.0 / r - 1.0 / c
    g = np.where(slack > 0, r * (1.0 - np.sqrt(a / np.where(slack > 0, slack, 1.0))), -np.inf)
    g = np.maximum(g, floor)
    return np.minimum(g, STABILITY_MARGIN * r)


def optimal_split(rates: NodeRates, Gamma: float, gamma_floor=None):
    """Minimize the summed share latency subject to sum(gamma) = Gamma.

    Stationarity gives gamma_i = r_i (1 - sqrt(a_i / (a_i + eta - 1/r_i - 1/r_comm_i)))
    above each floor; eta is found by a bracketed root search on sum(gamma) = Gamma.
    Returns (gamma, eta).
    """
    n = len(rates)
    floor = np.zeros(n) if gamma_floor is None else np.broadcast_to(
        np.asarray(gamma_floor, float), (n,)).copy()
    if np.any(floor < 0) or floor.sum() > Gamma + 1e-12:
        raise ValueError("floors must be nonnegative and sum to at most Gamma")
    if np.sum(rates.r_comp) * STABILITY_MARGIN <= Gamma:
        raise Infeasible(f"total r_comp {np.sum(rates.r_comp):.6g} does not exceed Gamma={Gamma}")
    if np.any(floor >= STABILITY_MARGIN * rates.r_comp):
        raise Infeasible("a floor exceeds its worker's stable load")

    def excess(eta):
        return float(np.sum(_gamma_of_eta(rates, eta, floor))) - Gamma

    lo = float(np.min(1.0 / rates.r_comp + 1.0 / rates.r_comm - rates.a))
    if excess(lo) >= 0:
        return _gamma_of_eta(rates, lo, floor), lo
    hi = lo + 1e6
    while excess(hi) < 0:
        hi = lo + 2.0 * (hi - lo)
        if hi - lo > 1e300:
            raise Infeasible("multiplier search diverged")
    eta = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return _gamma_of_eta(rates, eta, floor), eta


def uniform_split(n: int, Gamma: float) -> np.ndarray:
    return np.full(n, Gamma / n)


# -- strategy search ------------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    K: int
    m: int
    k: int
    Gamma: float | None = None

    @property
    def dist_id(self):
        return ("soliton", self.m, self.k)


@dataclass
class SystemParams:
    r: int
    s: int
    l: int
    upsilon: float
    p_enc: float = 1e4
    p_dec: float = 1e3
    phi: float = 0.09
    target_success: float = 0.99
    eps_straggler: float = 0.1
    gamma_floor: float = 0.0
    use_estimates: bool = True


@dataclass
class JobSizes:
    D_in: float
    D_out: float
    cu_work: float
    beta: float
    eps_dec: float

    def enc_symbol_bound(self):
        return self.beta * self.D_in

    def dec_symbol(self, K):
        return self.D_out * math.log(K) / (1.0 + self.eps_dec)


def job_sizes(params: SystemParams, strategy: Strategy) -> JobSizes:
    m, k, K = strategy.m, strategy.k, strategy.K
    r, s, l = params.r, params.s, params.l
    dist = build_modified_soliton(m, k)
    return JobSizes(
        D_in=r * s / m + l * s / k,
        D_out=r * l / K,
        cu_work=(r / m) * (l / k) * s,
        beta=dist.beta,
        eps_dec=soliton_overhead(m, k, params.target_success),
    )


@dataclass
class ScheduleDecision:
    node_set: list
    gamma: np.ndarray
    Gamma: float
    eta: float
    predicted: tuple
    strategy: Strategy
    rates: NodeRates = None
    sizes: JobSizes = None
    T_enc: float = 0.0
    T_dec: float = 0.0

    @property
    def L_exe(self):
        return self.predicted[2]

    def shares(self) -> dict:
        return {int(i): float(g) for i, g in zip(self.node_set, self.gamma)}


def fleet_moments(fleet, use_estimates=True):
    ids, M, V, b = [], [], [], []
    for w in fleet:
        if not w.alive:
            continue
        m1, m2 = w.moments(use_estimates)
        ids.append(w.id)
        M.append(m1)
        V.append(m2)
        b.append(w.bandwidth)
    return np.array(ids), np.array(M), np.array(V), np.array(b)


def evaluate_strategy(fleet, strategy: Strategy, params: SystemParams) -> ScheduleDecision:
    """Plan one candidate: filter, select nodes, split, predict."""
    sizes = job_sizes(params, strategy)
    K = strategy.K
    Gamma = strategy.Gamma
    if Gamma is None:
        Gamma = 1.0 + sizes.eps_dec + params.eps_straggler
    ids, M, V, b = fleet_moments(fleet, params.use_estimates)
    if len(ids) == 0:
        raise EmptyValidSet("fleet has no live workers")
    T_enc_sym = sizes.enc_symbol_bound() / params.p_enc
    T_dec_sym = sizes.dec_symbol(K) / params.p_dec
    timing = Timing(T_enc_sym, T_dec_sym, sizes.D_in / b, sizes.D_out / b, sizes.cu_work * M)
    valid = valid_workers(ids, timing)

    work = K * sizes.cu_work
    mean_T = work * M
    # additive CU times: Var(T) = K * Var(CU)
    second_T = K * sizes.cu_work ** 2 * np.maximum(V - M ** 2, 0.0) + mean_T ** 2
    rates = node_rates(ids, mean_T, second_T, b, sizes.D_in, sizes.D_out, params.upsilon)

    phi = max(params.phi, sizes.eps_dec)
    nodes = select_node_set(valid, rates, phi, sizes.eps_dec)
    # grow the set until the split has room for Gamma
    sub = rates.subset(valid)
    order = [int(sub.ids[j]) for j in np.argsort(-sub.r_comp, kind="stable")]
    while np.sum(rates.subset(nodes).r_comp) * STABILITY_MARGIN <= Gamma:
        if len(nodes) == len(order):
            raise Infeasible(f"valid workers cannot carry Gamma={Gamma}")
        nodes.append(order[len(nodes)])
    sub = rates.subset(nodes)
    gamma, eta = optimal_split(sub, Gamma, params.gamma_floor)
    T_enc = len(nodes) * sizes.enc_symbol_bound() / params.p_enc
    T_dec = T_dec_sym
    predicted = predict_job_latency(sub, gamma, params.upsilon, T_enc, T_dec)
    return ScheduleDecision(nodes, gamma, Gamma, eta, predicted,
                            Strategy(K, strategy.m, strategy.k, Gamma), sub, sizes, T_enc, T_dec)


def fingerprint(fleet, params: SystemParams):
    ids, M, V, b = fleet_moments(fleet, params.use_estimates)
    work = params.r * params.s * params.l
    r_comp = 1.0 / (params.upsilon * work * M)
    r_link = b / params.upsilon
    q = lambda v: tuple(float(f"{x:.2g}") for x in v)  # noqa: E731
    return tuple(int(i) for i in ids), q(r_comp), q(r_link)


def strategy_search(fleet, candidates, params: SystemParams, cache: dict | None = None):
    """Exhaustive search over candidate strategies; returns the decision with least L_exe."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate strategies")
    key = None
    if cache is not None:
        key = (fingerprint(fleet, params), tuple(candidates))
        if key in cache:
            return cache[key]
    best = None
    reasons = []
    for cand in candidates:
        try:
            dec = evaluate_strategy(fleet, cand, params)
        except (EmptyValidSet, InsufficientCapacity, Infeasible, UnstableQueue) as exc:
            reasons.append(f"K={cand.K} m={cand.m}: {exc}")
            continue
        if best is None or dec.L_exe < best.L_exe:
            best = dec
    if best is None:
        raise NoFeasibleStrategy("; ".join(reasons))
    if cache is not None:
        cache[key] = best
    return best


def divisors(n: int) -> list:
    return [d for d in range(1, n + 1) if n % d == 0]
