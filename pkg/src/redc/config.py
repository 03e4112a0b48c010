"""Scenario files: INI-style sections of key = value pairs.

See ``configs/example.ini`` for an annotated example.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .scheduling import Strategy, SystemParams, divisors
from .simulator import POLICIES, Scenario
from .worker_models import MODEL_KINDS, WorkerProfile, make_model

SECTIONS = {
    "scenario": {"id", "seed", "trials", "jobs", "policy", "purging", "qls", "completion",
                 "search"},
    "matrix": {"r", "s", "l", "fractional_blocks", "exact"},
    "strategy": {"k_values", "m", "gamma", "pair_gamma", "phi", "target_success",
                 "eps_straggler", "gamma_floor", "timeout_factor", "round_timeout",
                 "supplement_fraction", "max_rounds", "mds_margin", "early_supplement"},
    "fleet": {"count", "model", "mu", "mu_range", "bandwidth", "bandwidth_range", "delta",
              "p_heavy", "pareto_shape", "pareto_scale", "slow_factor"},
    "system": {"upsilon", "p_enc", "p_dec", "queue_bound"},
    "ewma": {"alpha", "beta", "warmup", "adaptive"},
}


@dataclass
class ScenarioConfig:
    id: str = "scenario"
    seed: int = 0
    trials: int = 1
    jobs: int = 1
    policies: list = field(default_factory=lambda: ["redc"])
    purging: list = field(default_factory=lambda: [True])
    qls: bool = True
    completion: str = "rank"
    search: bool = False
    r: int = 100
    s: int = 100
    l: int = 100
    fractional_blocks: bool = False
    exact: bool = False
    K_values: list = field(default_factory=lambda: [100])
    m_spec: object = "sqrt"
    gammas: list = field(default_factory=lambda: [None])
    pair_gamma: bool = False
    phi: float = 0.09
    target_success: float = 0.99
    eps_straggler: float = 0.1
    gamma_floor: float = 0.0
    timeout_factor: float = 3.0
    round_timeout: float | None = None
    supplement_fraction: float = 0.1
    max_rounds: int = 1000
    mds_margin: int | None = None
    early_supplement: bool = True
    fleet_count: int = 5
    fleet_model: str = "exponential"
    mu: list | None = None
    mu_range: tuple = (0.0, 2500.0)
    bandwidth: list | None = None
    bandwidth_range: tuple = (0.0, 1000.0)
    delta: float = 0.0
    p_heavy: float = 0.05
    pareto_shape: float = 1.5
    pareto_scale: float = 5.0
    slow_factor: float = 20.0
    upsilon: float = 1e-3
    p_enc: float = 1e4
    p_dec: float = 1e3
    queue_bound: int = 100_000
    ewma_alpha: float = 0.98
    ewma_beta: float = 0.98
    warmup: int = 200
    adaptive: bool = True
    source: str = "<string>"

    # -- derived --------------------------------------------------------

    def m_values(self, K: int) -> list:
        if self.m_spec == "sqrt":
            m = math.isqrt(K)
            return [m] if m * m == K else []
        if self.m_spec == "divisors":
            return divisors(K)
        return [m for m in self.m_spec if K % m == 0]

    def grid(self) -> list:
        """Strategy points (K, m, k, Gamma) in file order."""
        pts = []
        for ki, K in enumerate(self.K_values):
            gammas = [self.gammas[ki]] if self.pair_gamma else self.gammas
            for G in gammas:
                for m in self.m_values(K):
                    pts.append(Strategy(K, m, K // m, G))
        return pts

    def params(self) -> SystemParams:
        return SystemParams(self.r, self.s, self.l, self.upsilon, self.p_enc, self.p_dec,
                            self.phi, self.target_success, self.eps_straggler, self.gamma_floor)

    def fleet(self) -> list:
        rng = np.random.default_rng([self.seed, 99])
        n = self.fleet_count
        mu = self.mu if self.mu is not None else list(rng.uniform(*self.mu_range, n))
        bw = self.bandwidth if self.bandwidth is not None else list(rng.uniform(*self.bandwidth_range, n))
        if len(bw) == 1:
            bw = bw * n
        fleet = []
        for i in range(n):
            # per-unit-work rate; a draw of exactly zero would be a dead node
            rate = max(float(mu[i]), 1e-9)
            model = make_model(self.fleet_model, rate, self.delta, p_heavy=self.p_heavy,
                               shape=self.pareto_shape, scale_factor=self.pareto_scale,
                               slow_factor=self.slow_factor)
            fleet.append(WorkerProfile(i, model, max(float(bw[i]), 1e-9)))
        return fleet

    def scenarios(self) -> list:
        """One simulator scenario per (strategy point or search group, policy, purging)."""
        base_fleet = self.fleet()
        params = self.params()
        if self.search:
            by_gamma = {}
            for st in self.grid():
                by_gamma.setdefault(st.Gamma, []).append(st)
            groups = list(by_gamma.values())
        else:
            groups = [[st] for st in self.grid()]
        out = []
        for strategies in groups:
            for policy in self.policies:
                for purge in self.purging:
                    out.append(Scenario(
                        self.r, self.s, self.l, base_fleet, params, strategies, policy=policy,
                        purging=purge, qls=self.qls, jobs=self.jobs, ewma_alpha=self.ewma_alpha,
                        ewma_beta=self.ewma_beta, warmup=self.warmup, adaptive=self.adaptive,
                        round_timeout=self.round_timeout, timeout_factor=self.timeout_factor,
                        supplement_fraction=self.supplement_fraction,
                        early_supplement=self.early_supplement, max_rounds=self.max_rounds,
                        queue_bound=self.queue_bound, mds_margin=self.mds_margin,
                        completion=self.completion, exact=self.exact, id=self.id))
        return out


# -- parsing ----------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number."""
    idx = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            idx[(section, None)] = n
            continue
        m = re.match(r"([^=:#;]+?)\s*[=:]", line)
        if m and section is not None and not line.startswith(("#", ";")):
            idx[(section, m.group(1).strip().lower())] = n
    return idx


class _Reader:
    def __init__(self, cp, lines, source):
        self.cp, self.lines, self.source = cp, lines, source
        self.errors = []

    def error(self, section, key, msg):
        self.errors.append((self.lines.get((section, key)), f"[{section}] {key}: {msg}"
                            if key else f"[{section}]: {msg}"))

    def raw(self, section, key):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        return None

    def get(self, section, key, conv, default, check=None, why=""):
        raw = self.raw(section, key)
        if raw is None:
            return default
        try:
            val = conv(raw)
        except (ValueError, TypeError) as exc:
            self.error(section, key, f"cannot parse {raw!r} ({exc})")
            return default
        if check is not None and not check(val):
            self.error(section, key, f"{raw!r} {why}")
            return default
        return val


def _bool(raw):
    v = raw.lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError("expected true/false")


def _bools(raw):
    return [_bool(x) for x in _split(raw)]


def _split(raw):
    return [x.strip() for x in raw.split(",") if x.strip()]


def _floats(raw):
    return [float(x) for x in _split(raw)]


def _ints(raw):
    return [int(x) for x in _split(raw)]


def _pair(raw):
    v = _floats(raw)
    if len(v) != 2 or v[0] > v[1] or v[0] < 0:
        raise ValueError("expected 'low, high' with 0 <= low <= high")
    return tuple(v)


def _gammas(raw):
    if raw.lower() == "auto":
        return [None]
    return _floats(raw)


def _m_spec(raw):
    if raw.lower() in ("sqrt", "divisors"):
        return raw.lower()
    return _ints(raw)


def _positive(v):
    return v > 0


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    """Parse and fully validate; raises ConfigError listing every violation."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), source) from None
    lines = _line_index(text)
    rd = _Reader(cp, lines, source)
    for section in cp.sections():
        allowed = SECTIONS.get(section.lower())
        if allowed is None:
            rd.error(section, None, "unknown section")
            continue
        for key in cp.options(section):
            if key not in allowed:
                rd.error(section, key, "unknown key")

    c = ScenarioConfig(source=source)
    S = "scenario"
    c.id = rd.get(S, "id", str, c.id)
    c.seed = rd.get(S, "seed", int, c.seed, lambda v: v >= 0, "must be >= 0")
    c.trials = rd.get(S, "trials", int, c.trials, lambda v: v >= 1, "must be >= 1")
    c.jobs = rd.get(S, "jobs", int, c.jobs, lambda v: v >= 1, "must be >= 1")
    c.policies = rd.get(S, "policy", _split, c.policies,
                        lambda v: v and all(p in POLICIES for p in v), f"must be among {POLICIES}")
    c.purging = rd.get(S, "purging", _bools, c.purging, bool, "needs a value")
    c.qls = rd.get(S, "qls", _bool, c.qls)
    c.completion = rd.get(S, "completion", str, c.completion, lambda v: v in ("rank", "peeling"),
                          "must be rank or peeling")
    c.search = rd.get(S, "search", _bool, c.search)

    M = "matrix"
    for key in ("r", "s", "l"):
        setattr(c, key, rd.get(M, key, int, getattr(c, key), _positive, "must be positive"))
    c.fractional_blocks = rd.get(M, "fractional_blocks", _bool, c.fractional_blocks)
    c.exact = rd.get(M, "exact", _bool, c.exact)

    T = "strategy"
    c.K_values = rd.get(T, "k_values", _ints, c.K_values,
                        lambda v: v and all(x >= 1 for x in v), "must be positive integers")
    c.m_spec = rd.get(T, "m", _m_spec, c.m_spec,
                      lambda v: isinstance(v, str) or all(x >= 1 for x in v), "must be positive")
    c.gammas = rd.get(T, "gamma", _gammas, c.gammas,
                      lambda v: all(g is None or g >= 1 for g in v), "must be >= 1")
    c.pair_gamma = rd.get(T, "pair_gamma", _bool, c.pair_gamma)
    c.phi = rd.get(T, "phi", float, c.phi, lambda v: v >= 0, "must be >= 0")
    c.target_success = rd.get(T, "target_success", float, c.target_success,
                              lambda v: 0 < v < 1, "must lie in (0, 1)")
    c.eps_straggler = rd.get(T, "eps_straggler", float, c.eps_straggler, lambda v: v >= 0,
                             "must be >= 0")
    c.gamma_floor = rd.get(T, "gamma_floor", float, c.gamma_floor, lambda v: v >= 0, "must be >= 0")
    c.timeout_factor = rd.get(T, "timeout_factor", float, c.timeout_factor, _positive,
                              "must be positive")
    c.round_timeout = rd.get(T, "round_timeout", float, c.round_timeout, _positive,
                             "must be positive")
    c.supplement_fraction = rd.get(T, "supplement_fraction", float, c.supplement_fraction,
                                   _positive, "must be positive")
    c.max_rounds = rd.get(T, "max_rounds", int, c.max_rounds, _positive, "must be positive")
    c.mds_margin = rd.get(T, "mds_margin", int, c.mds_margin, lambda v: v >= 0, "must be >= 0")
    c.early_supplement = rd.get(T, "early_supplement", _bool, c.early_supplement)

    F = "fleet"
    c.fleet_count = rd.get(F, "count", int, c.fleet_count, _positive, "must be positive")
    c.fleet_model = rd.get(F, "model", str, c.fleet_model, lambda v: v in MODEL_KINDS,
                           f"must be among {MODEL_KINDS}")
    c.mu = rd.get(F, "mu", _floats, c.mu, lambda v: all(x > 0 for x in v), "rates must be positive")
    c.mu_range = rd.get(F, "mu_range", _pair, c.mu_range)
    c.bandwidth = rd.get(F, "bandwidth", _floats, c.bandwidth, lambda v: all(x > 0 for x in v),
                         "bandwidths must be positive")
    c.bandwidth_range = rd.get(F, "bandwidth_range", _pair, c.bandwidth_range)
    c.delta = rd.get(F, "delta", float, c.delta, lambda v: v >= 0, "must be >= 0")
    c.p_heavy = rd.get(F, "p_heavy", float, c.p_heavy, lambda v: 0 <= v <= 1, "must lie in [0, 1]")
    c.pareto_shape = rd.get(F, "pareto_shape", float, c.pareto_shape, _positive, "must be positive")
    c.pareto_scale = rd.get(F, "pareto_scale", float, c.pareto_scale, _positive, "must be positive")
    c.slow_factor = rd.get(F, "slow_factor", float, c.slow_factor, _positive, "must be positive")

    Y = "system"
    c.upsilon = rd.get(Y, "upsilon", float, c.upsilon, _positive, "must be positive")
    c.p_enc = rd.get(Y, "p_enc", float, c.p_enc, _positive, "must be positive")
    c.p_dec = rd.get(Y, "p_dec", float, c.p_dec, _positive, "must be positive")
    c.queue_bound = rd.get(Y, "queue_bound", int, c.queue_bound, _positive, "must be positive")

    E = "ewma"
    c.ewma_alpha = rd.get(E, "alpha", float, c.ewma_alpha, lambda v: 0 <= v < 1, "must lie in [0, 1)")
    c.ewma_beta = rd.get(E, "beta", float, c.ewma_beta, lambda v: 0 <= v < 1, "must lie in [0, 1)")
    c.warmup = rd.get(E, "warmup", int, c.warmup, lambda v: v >= 0, "must be >= 0")
    c.adaptive = rd.get(E, "adaptive", _bool, c.adaptive)

    _cross_checks(c, rd)
    if rd.errors:
        raise ConfigError("\n".join(_fmt(source, ln, msg) for ln, msg in rd.errors))
    return c


def _fmt(source, line, msg):
    return f"{source}:{line}: {msg}" if line else f"{source}: {msg}"


def _cross_checks(c: ScenarioConfig, rd: _Reader):
    if c.mu is not None and len(c.mu) != c.fleet_count:
        rd.error("fleet", "mu", f"lists {len(c.mu)} rates for {c.fleet_count} workers")
    if c.bandwidth is not None and len(c.bandwidth) not in (1, c.fleet_count):
        rd.error("fleet", "bandwidth", f"lists {len(c.bandwidth)} values for {c.fleet_count} workers")
    if c.mu is None and c.mu_range[1] <= 0:
        rd.error("fleet", "mu_range", "upper end must be positive")
    if c.bandwidth is None and c.bandwidth_range[1] <= 0:
        rd.error("fleet", "bandwidth_range", "upper end must be positive")
    if c.pair_gamma and len(c.gammas) != len(c.K_values):
        rd.error("strategy", "gamma", "pair_gamma needs one gamma per K value")
    if c.exact and c.fractional_blocks:
        rd.error("matrix", "exact", "exact products need whole blocks")
    if c.exact and c.r * c.s * c.l > 10 ** 6:
        rd.error("matrix", "exact", "exact mode is meant for small test matrices")
    for K in c.K_values:
        ms = c.m_values(K)
        if not ms:
            rd.error("strategy", "m", f"no admissible m for K={K}")
        if not isinstance(c.m_spec, str):
            for m in c.m_spec:
                if K % m:
                    rd.error("strategy", "m", f"m={m} does not divide K={K}")
        if c.fractional_blocks:
            continue
        for m in ms:
            k = K // m
            if c.r % m:
                rd.error("strategy", "m", f"m={m} does not divide r={c.r} (K={K})")
            if c.l % k:
                rd.error("strategy", "m", f"k={k} does not divide l={c.l} (K={K})")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read: {exc.strerror}", path=str(path)) from None
    return parse_config(text, str(path))


def with_overrides(c: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(c, **{k: v for k, v in kw.items() if v is not None})
