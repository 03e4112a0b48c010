"""Discrete-event simulation of coded job offloading.

One controller encodes symbols on a single encoder (rate p_enc), ships each to
its worker over a FIFO uplink, the worker computes CUs in FIFO order, results
return over a FIFO downlink and are decoded one at a time (rate p_dec).  Jobs
arrive as a Poisson process.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .coding import Encoder, round_sizes, split_matrices, worker_compute
from .decoding import DecoderState
from .degree_analysis import build_modified_soliton
from .errors import ConfigError, SaturationAbort
from .scheduling import (ScheduleDecision, Strategy, SystemParams, job_sizes, strategy_search,
                         uniform_split)
from .worker_models import Ewma, WorkerProfile, ewma_update

POLICIES = ("redc", "uniform", "ideal", "fixed_threshold_mds")

# lower value runs first among simultaneous events
PRIORITY = {
    "decode_complete": 0,
    "purge_issued": 1,
    "symbol_decoded": 2,
    "cu_completed": 3,
    "result_downlinked": 4,
    "symbol_uplinked": 5,
    "symbol_encoded": 6,
    "round_timeout": 7,
    "job_arrival": 8,
}


@dataclass
class Scenario:
    r: int
    s: int
    l: int
    fleet: list
    params: SystemParams
    strategies: list
    policy: str = "redc"
    purging: bool = True
    qls: bool = True
    jobs: int = 1
    ewma_alpha: float = 0.98
    ewma_beta: float = 0.98
    warmup: int = 200
    adaptive: bool = True
    round_timeout: float | None = None
    timeout_factor: float = 3.0
    supplement_fraction: float = 0.1
    early_supplement: bool = True
    max_rounds: int = 1000
    queue_bound: int = 100_000
    mds_margin: int | None = None
    completion: str = "rank"
    exact: bool = False
    fixed_split: dict | None = None
    id: str = "scenario"

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if not self.strategies:
            raise ConfigError("no strategies")


@dataclass
class JobTimeline:
    job_id: int
    arrival: float
    completion: float
    K: int
    m: int
    k: int
    Gamma: float
    policy: str
    T_enc: float = 0.0
    T_in: float = 0.0
    T_comp: float = 0.0
    T_out: float = 0.0
    T_dec: float = 0.0
    symbols_used: int = 0
    dispatched: int = 0
    rounds: int = 1
    used: dict = field(default_factory=dict)
    completed: dict = field(default_factory=dict)
    purged: dict = field(default_factory=dict)
    dispatched_to: dict = field(default_factory=dict)
    finish: dict = field(default_factory=dict)
    predicted_L_exe: float = math.nan
    verified: bool | None = None
    done: bool = True

    @property
    def L_exe(self) -> float:
        return self.completion - self.arrival

    @property
    def phase_sum(self) -> float:
        return self.T_enc + self.T_in + self.T_comp + self.T_out + self.T_dec

    def contribution(self, wid) -> float:
        return self.used.get(wid, 0) / self.symbols_used if self.symbols_used else 0.0

    def delivered_load(self, wid) -> float:
        u = self.used.get(wid, 0)
        return self.completed.get(wid, 0) / u if u else math.nan


@dataclass
class WorkerStats:
    id: int
    busy_time: float
    cus_completed: int
    cus_purged: int
    max_queue: int
    utilization: float
    sojourn_mean: float
    sojourns: int


@dataclass
class RunReport:
    scenario_id: str
    seed: int
    policy: str
    jobs: list
    workers: list
    end_time: float
    events: int
    decision: ScheduleDecision | None = None

    def completed_jobs(self):
        return [j for j in self.jobs if j.done]

    def mean_latency(self) -> float:
        return float(np.mean([j.L_exe for j in self.completed_jobs()]))


class _Sym:
    __slots__ = ("job", "idx", "wid", "support", "block", "enc_cost", "t_enc_in", "t_enc",
                 "t_up_in", "t_up", "t_comp", "t_down", "t_dec", "state")

    def __init__(self, job, idx, wid, t):
        self.job, self.idx, self.wid = job, idx, wid
        self.support = self.block = None
        self.enc_cost = 0.0
        self.t_enc_in = t
        self.t_enc = self.t_up_in = self.t_up = self.t_comp = self.t_down = self.t_dec = math.nan
        self.state = "encode"


class _Job:
    def __init__(self, jid, arrival, decision, strategy, rng):
        self.id = jid
        self.arrival = arrival
        self.decision = decision
        self.strategy = strategy
        self.rng = rng
        self.done = False
        self.failed = False
        self.completion = math.nan
        self.round = 0
        self.round_left = 0
        self.held = []
        self.outstanding = 0
        self.next_idx = 0
        self.used = []
        self.mds_count = 0
        self.swrr = None
        self.dispatched = {}
        self.completed = {}
        self.purged = {}
        self.finish = {}
        self.encoder = None
        self.decoder = None
        self.truth = None
        self.verified = None
        self.shares = None
        self.timeout = math.inf


class _Worker:
    def __init__(self, profile, rng):
        self.profile = profile
        self.id = profile.id
        self.rng = rng
        self.uplink = deque()
        self.up_busy = None
        self.queue = deque()
        self.serving = None
        self.downlink = deque()
        self.down_busy = None
        self.busy_time = 0.0
        self.completed = 0
        self.purged = 0
        self.max_queue = 0
        self.sojourn_total = 0.0
        self.sojourn_n = 0

    def holding(self):
        return len(self.uplink) + (self.up_busy is not None) + len(self.queue)


def arrival_times(upsilon: float, n: int, rng) -> np.ndarray:
    return np.cumsum(rng.exponential(1.0 / upsilon, n))


def _swrr_assign(weights, count, state):
    """Smooth weighted round robin; ``state`` carries over between rounds."""
    w = np.asarray(weights, float)
    total = w.sum()
    out = []
    for _ in range(count):
        state += w
        i = int(np.argmax(state))
        state[i] -= total
        out.append(i)
    return out


class Simulation:
    def __init__(self, scenario: Scenario, seed: int):
        self.sc = scenario
        self.seed = int(seed)
        self.now = 0.0
        self.heap = []
        self.seq = 0
        self.events = 0
        self.profiles = [replace(w, ewma=Ewma()) for w in scenario.fleet]
        self.workers = {p.id: _Worker(p, self._rng(2, p.id)) for p in self.profiles}
        self.enc_queue = deque()
        self.enc_busy = False
        self.dec_queue = deque()
        self.dec_busy = False
        self.pool = deque()
        self.jobs = []
        self.cache = {}
        self.decision = None
        self.params = scenario.params
        if scenario.warmup <= 0:
            self.params = replace(self.params, use_estimates=False)

    def _rng(self, *key):
        return np.random.default_rng(np.random.SeedSequence([self.seed, *key]))

    def push(self, t, kind, *payload):
        self.seq += 1
        heapq.heappush(self.heap, (t, PRIORITY[kind], self.seq, kind, payload))

    # -- planning --------------------------------------------------------

    def _warmup(self):
        rng = self._rng(4)
        for p in self.profiles:
            for _ in range(self.sc.warmup):
                ewma_update(p, float(p.service.sample(rng)), self.sc.ewma_alpha, self.sc.ewma_beta)

    def _plan(self):
        sc = self.sc
        if sc.fixed_split is not None:
            st = sc.strategies[0]
            ids = list(sc.fixed_split)
            gamma = np.array([sc.fixed_split[i] for i in ids], float)
            return ScheduleDecision(ids, gamma, float(gamma.sum()), math.nan,
                                    (math.nan, math.nan, math.nan),
                                    Strategy(st.K, st.m, st.k, float(gamma.sum())),
                                    sizes=job_sizes(self.params, st))
        if self.decision is not None and not sc.adaptive:
            return self.decision
        return strategy_search(self.profiles, sc.strategies, self.params, self.cache)

    def _timeout(self, decision):
        if self.sc.round_timeout is not None:
            return self.sc.round_timeout
        if math.isfinite(decision.L_exe):
            return self.sc.timeout_factor * decision.L_exe
        return math.inf

    # -- main loop ---------------------------------------------------------

    def run(self) -> RunReport:
        sc = self.sc
        self._warmup()
        self.decision = self._plan()
        times = arrival_times(sc.params.upsilon, sc.jobs, self._rng(3))
        for jid, t in enumerate(times):
            self.push(float(t), "job_arrival", jid)
        handlers = {
            "job_arrival": self.on_arrival,
            "symbol_encoded": self.on_encoded,
            "symbol_uplinked": self.on_uplinked,
            "cu_completed": self.on_cu_completed,
            "result_downlinked": self.on_downlinked,
            "symbol_decoded": self.on_decoded,
            "decode_complete": self.on_decode_complete,
            "purge_issued": self.on_purge,
            "round_timeout": self.on_timeout,
        }
        while self.heap:
            t, _, _, kind, payload = heapq.heappop(self.heap)
            if t < self.now:
                raise AssertionError("event scheduled in the past")
            self.now = t
            self.events += 1
            handlers[kind](*payload)
        return self._report()

    # -- job lifecycle ---------------------------------------------------

    def on_arrival(self, jid):
        sc = self.sc
        decision = self._plan() if jid > 0 else self.decision
        st = decision.strategy
        job = _Job(jid, self.now, decision, st, self._rng(1, jid))
        job.timeout = self._timeout(decision)
        dist = build_modified_soliton(st.m, st.k)
        if sc.exact:
            A = job.rng.integers(-9, 10, (sc.s, sc.r))
            B = job.rng.integers(-9, 10, (sc.s, sc.l))
            job.truth = A.T @ B
            job.encoder = Encoder(dist, job.rng, split_matrices(A, B, st.m, st.k))
        else:
            job.encoder = Encoder(dist, job.rng, m=st.m, k=st.k)
        job.decoder = DecoderState(st.K, sc.completion)
        job.swrr = np.zeros(len(decision.node_set))
        job.shares = self._shares(decision)
        self.jobs.append(job)
        if sc.policy == "fixed_threshold_mds":
            margin = sc.mds_margin
            if margin is None:
                margin = round_sizes(st.K, decision.Gamma)[0] - st.K
            first = st.K + max(margin, 0)
        else:
            first = round_sizes(st.K, decision.Gamma, sc.supplement_fraction)[0]
        self._issue_round(job, first)

    def _shares(self, decision):
        n = len(decision.node_set)
        if self.sc.policy == "uniform":
            return uniform_split(n, decision.Gamma)
        return np.asarray(decision.gamma, float)

    def _issue_round(self, job, count):
        job.round += 1
        job.round_left = count
        if self.sc.policy == "ideal":
            targets = [None] * count
        else:
            idx = _swrr_assign(job.shares, count, job.swrr)
            targets = [job.decision.node_set[i] for i in idx]
        for wid in targets:
            sym = _Sym(job, job.next_idx, wid, self.now)
            job.next_idx += 1
            job.outstanding += 1
            self.enc_queue.append(sym)
        if len(self.enc_queue) > self.sc.queue_bound:
            raise SaturationAbort("encoder backlog exceeds the queue bound")
        self._start_encoder()

    def _supplement(self, job):
        if job.round >= self.sc.max_rounds:
            job.failed = job.done = True
            return
        self._issue_round(job, round_sizes(job.strategy.K, 1.0, self.sc.supplement_fraction)[1])

    # -- encoder -----------------------------------------------------------

    def _start_encoder(self):
        while not self.enc_busy and self.enc_queue:
            sym = self.enc_queue.popleft()
            job = sym.job
            if job.done:
                job.outstanding -= 1
                continue
            es = job.encoder.next_symbol()
            sym.support = es.support
            if es.a_tilde is not None:
                sym.block = worker_compute(es)
            st = job.strategy
            sc = self.sc
            sym.enc_cost = (len(es.a_support) * sc.r / st.m + len(es.b_support) * sc.l / st.k) * sc.s
            self.enc_busy = True
            self.push(self.now + sym.enc_cost / sc.params.p_enc, "symbol_encoded", sym)

    def on_encoded(self, sym):
        self.enc_busy = False
        sym.t_enc = self.now
        job = sym.job
        job.round_left -= 1
        last = job.round_left == 0
        if last and math.isfinite(job.timeout):
            self.push(self.now + job.timeout, "round_timeout", job, job.round)
        if job.done:
            job.outstanding -= 1
        elif self.sc.qls:
            self._dispatch(sym)
        else:
            job.held.append(sym)
            if last:
                held, job.held = job.held, []
                for s in held:
                    if not job.done:
                        self._dispatch(s)
        self._start_encoder()

    def _dispatch(self, sym):
        job = sym.job
        sym.t_up_in = self.now
        sym.state = "uplink"
        if sym.wid is None:
            self.pool.append(sym)
            self._feed_idle()
            return
        job.dispatched[sym.wid] = job.dispatched.get(sym.wid, 0) + 1
        w = self.workers[sym.wid]
        w.uplink.append(sym)
        self._start_uplink(w)

    def _feed_idle(self):
        for wid in self.decision_nodes():
            w = self.workers[wid]
            while self.pool and w.holding() == 0:
                sym = self.pool.popleft()
                if sym.job.done:
                    sym.job.outstanding -= 1
                    continue
                sym.wid = wid
                sym.job.dispatched[wid] = sym.job.dispatched.get(wid, 0) + 1
                w.uplink.append(sym)
                self._start_uplink(w)

    def decision_nodes(self):
        return self.decision.node_set

    # -- links and workers -----------------------------------------------

    def _start_uplink(self, w):
        if w.up_busy is None and w.uplink:
            sym = w.uplink.popleft()
            w.up_busy = sym
            sizes = sym.job.decision.sizes
            self.push(self.now + sizes.D_in / w.profile.bandwidth, "symbol_uplinked", w.id, sym)

    def on_uplinked(self, wid, sym):
        w = self.workers[wid]
        w.up_busy = None
        sym.t_up = self.now
        if sym.job.done and self.sc.purging:
            self._purge_one(w, sym)
        else:
            sym.state = "queued"
            w.queue.append(sym)
        if len(w.queue) > w.max_queue:
            w.max_queue = len(w.queue)
            if w.max_queue > self.sc.queue_bound:
                raise SaturationAbort(f"worker {wid} queue exceeds {self.sc.queue_bound}")
        self._start_uplink(w)
        self._start_service(w)

    def _start_service(self, w):
        if w.serving is None and w.queue:
            sym = w.queue.popleft()
            sym.state = "service"
            w.serving = sym
            work = sym.job.decision.sizes.cu_work
            duration = work * float(w.profile.service.sample(w.rng))
            w.busy_time += duration
            self.push(self.now + duration, "cu_completed", w.id, sym, duration)
            if self.sc.policy == "ideal":
                self._feed_idle()

    def on_cu_completed(self, wid, sym, duration):
        w = self.workers[wid]
        w.serving = None
        w.completed += 1
        sym.t_comp = self.now
        sym.state = "downlink"
        w.sojourn_total += self.now - sym.t_up
        w.sojourn_n += 1
        job = sym.job
        job.completed[wid] = job.completed.get(wid, 0) + 1
        job.finish[wid] = self.now - job.arrival
        ewma_update(w.profile, duration / job.decision.sizes.cu_work, self.sc.ewma_alpha,
                    self.sc.ewma_beta)
        w.downlink.append(sym)
        self._start_downlink(w)
        self._start_service(w)
        if self.sc.policy == "ideal":
            self._feed_idle()

    def _start_downlink(self, w):
        if w.down_busy is None and w.downlink:
            sym = w.downlink.popleft()
            w.down_busy = sym
            sizes = sym.job.decision.sizes
            self.push(self.now + sizes.D_out / w.profile.bandwidth, "result_downlinked", w.id, sym)

    def on_downlinked(self, wid, sym):
        w = self.workers[wid]
        w.down_busy = None
        sym.t_down = self.now
        sym.state = "decode"
        self.dec_queue.append(sym)
        self._start_downlink(w)
        self._start_decoder()

    # -- decoder -----------------------------------------------------------

    def _start_decoder(self):
        while not self.dec_busy and self.dec_queue:
            sym = self.dec_queue.popleft()
            job = sym.job
            if job.done:
                job.outstanding -= 1
                continue
            sizes = job.decision.sizes
            K = job.strategy.K
            if self.sc.policy == "fixed_threshold_mds":
                # any K results suffice but decoding happens in one batch
                cost = 0.0 if job.mds_count + 1 < K else sizes.D_out * K * math.log(max(K, 2))
                job.mds_count += 1
            else:
                cost = sizes.dec_symbol(K)
            self.dec_busy = True
            self.push(self.now + cost / self.sc.params.p_dec, "symbol_decoded", sym)

    def on_decoded(self, sym):
        self.dec_busy = False
        sym.t_dec = self.now
        sym.state = "done"
        job = sym.job
        job.outstanding -= 1
        if not job.done:
            job.used.append(sym)
            if self.sc.policy == "fixed_threshold_mds":
                complete = len(job.used) >= job.strategy.K
            else:
                complete = job.decoder.receive(sym.support, sym.block)
            if complete:
                job.done = True
                job.completion = self.now
                self.push(self.now, "decode_complete", job)
            elif job.outstanding == 0 and self.sc.early_supplement and job.round_left == 0:
                self._supplement(job)
        self._start_decoder()

    def on_decode_complete(self, job):
        if self.sc.exact and self.sc.policy != "fixed_threshold_mds":
            st = job.strategy
            job.verified = bool(np.array_equal(job.decoder.assemble(st.m, st.k), job.truth))
        if self.sc.purging:
            self.push(self.now, "purge_issued", job)

    def on_purge(self, job):
        for w in self.workers.values():
            for attr in ("uplink", "queue"):
                q = getattr(w, attr)
                keep = deque()
                for sym in q:
                    if sym.job is job:
                        self._purge_one(w, sym)
                    else:
                        keep.append(sym)
                setattr(w, attr, keep)
        if self.pool:
            self.pool = deque(s for s in self.pool if not (s.job is job and self._drop(s)))

    @staticmethod
    def _purge_one(w, sym):
        job = sym.job
        job.purged[w.id] = job.purged.get(w.id, 0) + 1
        job.outstanding -= 1
        w.purged += 1
        sym.state = "purged"

    @staticmethod
    def _drop(sym):
        sym.job.outstanding -= 1
        sym.state = "purged"
        return True

    def on_timeout(self, job, round_no):
        if not job.done and round_no == job.round:
            self._supplement(job)

    # -- reporting ---------------------------------------------------------

    def _report(self) -> RunReport:
        timelines = []
        for job in self.jobs:
            st = job.strategy
            tl = JobTimeline(job.id, job.arrival, job.completion, st.K, st.m, st.k,
                             job.decision.Gamma, self.sc.policy, rounds=job.round,
                             predicted_L_exe=job.decision.L_exe, verified=job.verified,
                             done=not job.failed)
            tl.symbols_used = len(job.used)
            tl.dispatched = sum(job.dispatched.values())
            tl.dispatched_to = dict(job.dispatched)
            tl.completed = dict(job.completed)
            tl.purged = dict(job.purged)
            tl.finish = dict(job.finish)
            for s in job.used:
                tl.used[s.wid] = tl.used.get(s.wid, 0) + 1
            if job.used:
                u = job.used
                enc_end = max(s.t_enc for s in u)
                tl.T_enc = enc_end - job.arrival
                tl.T_in = max(s.t_up for s in u) - min(s.t_up_in for s in u)
                tl.T_comp = max(s.t_comp for s in u) - min(s.t_up for s in u)
                tl.T_out = max(s.t_down for s in u) - min(s.t_comp for s in u)
                tl.T_dec = max(s.t_dec for s in u) - min(s.t_down for s in u)
                held_until = max(s.t_up_in for s in u)
                # symbols held for a full-round release wait inside the encode phase
                tl.T_enc = max(tl.T_enc, held_until - job.arrival)
            timelines.append(tl)
        end = self.now
        stats = []
        for w in self.workers.values():
            stats.append(WorkerStats(w.id, w.busy_time, w.completed, w.purged, w.max_queue,
                                     w.busy_time / end if end > 0 else 0.0,
                                     w.sojourn_total / w.sojourn_n if w.sojourn_n else math.nan,
                                     w.sojourn_n))
        return RunReport(self.sc.id, self.seed, self.sc.policy, timelines, stats, end,
                         self.events, self.decision)


def run(scenario: Scenario, seed: int) -> RunReport:
    return Simulation(scenario, seed).run()


def run_baseline(scenario: Scenario, policy: str, seed: int) -> RunReport:
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}")
    return run(replace(scenario, policy=policy), seed)


def qls_comparison(scenario: Scenario, seed: int) -> tuple[float, float]:
    """Makespan of one job with and without pipelined launch, same seed."""
    one = replace(scenario, jobs=1)
    t_qls = run(replace(one, qls=True), seed).jobs[0].L_exe
    t_full = run(replace(one, qls=False), seed).jobs[0].L_exe
    return t_qls, t_full


@dataclass
class EpsDecReport:
    grid: list
    mean: np.ndarray
    stderr: np.ndarray
    samples: list
    lower_bound: float = 0.0

    @property
    def grand_mean(self) -> float:
        return float(np.mean(self.mean))


def sample_eps_dec(K, m, k, rng, completion="rank") -> float:
    """Overhead N/K - 1 of one decode fed straight from the symbol stream."""
    enc = Encoder(build_modified_soliton(m, k), rng, m=m, k=k)
    dec = DecoderState(K, completion)
    while not dec.receive(enc.next_symbol().support):
        pass
    return dec.symbols_received / K - 1.0


def measure_eps_dec(grid, trials: int, seed: int, completion: str = "rank") -> EpsDecReport:
    """Mean overhead per (K, m, k) grid point.

    Symbols are i.i.d., so the number needed does not depend on arrival timing;
    each trial decodes the stream directly.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    grid = [tuple(g) if isinstance(g, (tuple, list)) else _square(g) for g in grid]
    samples = []
    for gi, (K, m, k) in enumerate(grid):
        vals = [sample_eps_dec(K, m, k, np.random.default_rng([seed, gi, t]), completion)
                for t in range(trials)]
        samples.append(np.array(vals))
    mean = np.array([s.mean() for s in samples])
    se = np.array([s.std(ddof=1) / math.sqrt(len(s)) if len(s) > 1 else 0.0 for s in samples])
    return EpsDecReport(grid, mean, se, samples)


def _square(K):
    m = math.isqrt(K)
    if m * m != K:
        raise ValueError(f"K={K} is not a perfect square; give (K, m, k)")
    return K, m, m


def single_queue_sojourn(arrival_rate: float, sample_service, n_tasks: int, rng) -> float:
    """Mean sojourn of a FIFO single-server queue via the Lindley recursion."""
    gaps = rng.exponential(1.0 / arrival_rate, n_tasks)
    service = np.asarray(sample_service(rng, n_tasks), float)
    wait = 0.0
    total = 0.0
    for i in range(n_tasks):
        total += wait + service[i]
        if i + 1 < n_tasks:
            wait = max(0.0, wait + service[i] - gaps[i + 1])
    return total / n_tasks
