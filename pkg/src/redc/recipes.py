"""Built-in experiment recipes, one per reproduced figure.

Each simulated recipe is a scenario file (so ``redc validate`` can check it)
plus an aggregation step turning per-job rows into plot series.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .config import parse_config
from .errors import UnknownFigure
from .scheduling import evaluate_strategy
from .simulator import measure_eps_dec

DEFAULT_TRIALS = 500
FAST_TRIALS = 50

_MATRIX = """
[matrix]
r = 100
s = 100
l = 100
# K = 49 and K = 225 do not divide 100; sizes enter the model as averages
fractional_blocks = true
"""

_RANDOM_FLEET = """
[fleet]
count = {count}
model = {model}
mu_range = 0, 2500
bandwidth_range = 0, 1000
"""


def _fig7(phi, mu):
    # fleet capacity must exceed Gamma = 1 + phi
    return f"""
[scenario]
id = fig7_phi{phi:.2f}
seed = 0
trials = 500
policy = redc, uniform
# per-node finish times need every share to run to completion
purging = false
[strategy]
k_values = 225
m = 15
gamma = {1 + phi:.2f}
phi = {phi}
""" + _MATRIX + f"""
[fleet]
count = 5
model = exponential
mu = {mu}
bandwidth = 500
[system]
upsilon = 0.001
[ewma]
alpha = 0.98
beta = 0.98
warmup = 200
"""


RECIPES = {
    "fig5": """
[scenario]
id = fig5
seed = 0
trials = 1
[strategy]
k_values = 49, 100, 225
m = divisors
gamma = 1.36, 1.30, 1.20
pair_gamma = true
phi = 0.09
""" + _MATRIX + _RANDOM_FLEET.format(count=150, model="exponential") + """
[system]
upsilon = 0.001
""",
    "fig6": """
[scenario]
id = fig6
seed = 0
trials = 500
[strategy]
k_values = 49, 100, 144, 196, 225
m = sqrt
""" + _MATRIX,
    "fig7": [_fig7(0.09, "330, 290, 250, 200, 180"),
             _fig7(0.50, "450, 400, 340, 275, 250")],
    "fig8": """
[scenario]
id = fig8
seed = 0
trials = 500
policy = redc, uniform, ideal, fixed_threshold_mds
purging = true, false
[strategy]
k_values = 100
m = 10
gamma = 1.0, 1.1, 1.2, 1.3, 1.4, 1.5
phi = 2
""" + _MATRIX + _RANDOM_FLEET.format(count=150, model="exponential") + """
[system]
upsilon = 0.001
""",
    "fig9": """
[scenario]
id = fig9
seed = 0
trials = 500
policy = redc, uniform, ideal, fixed_threshold_mds
purging = true
[strategy]
k_values = 100
m = 10
gamma = 1.0, 1.1, 1.2, 1.3, 1.4, 1.5
phi = 2
""" + _MATRIX + _RANDOM_FLEET.format(count=150, model="unstable1") + """
[system]
upsilon = 0.001
""",
}

FIGURES = tuple(RECIPES)


def recipe_configs(name: str) -> list:
    """Parsed scenario files of a recipe (most recipes have exactly one)."""
    if name not in RECIPES:
        raise UnknownFigure(f"unknown figure {name!r}; choose from {', '.join(FIGURES)}")
    texts = RECIPES[name]
    if isinstance(texts, str):
        texts = [texts]
    return [parse_config(t, f"<recipe {name}>") for t in texts]


def _mean_ci(values):
    v = np.asarray(values, float)
    if len(v) == 0:
        return math.nan, math.nan
    half = 1.96 * v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    return float(v.mean()), float(half)


# -- figure builders ------------------------------------------------------
# each returns (series, manifest); series maps file stem -> (columns, rows)


def build_fig5(cfgs, run_rows=None):
    cfg = cfgs[0]
    params = replace(cfg.params(), use_estimates=False)
    fleet = cfg.fleet()
    series, curves = {}, []
    for K in cfg.K_values:
        rows = []
        for st in (s for s in cfg.grid() if s.K == K):
            try:
                L = evaluate_strategy(fleet, st, params).L_exe
            except Exception:  # infeasible grid points plot as gaps
                L = math.nan
            rows.append((st.m, L))
        finite = [r for r in rows if math.isfinite(r[1])]
        best = min(finite, key=lambda r: r[1])[0] if finite else None
        series[f"fig5_K{K}"] = (("m", "T_job"), rows)
        curves.append({"file": f"fig5_K{K}.csv", "K": K, "argmin_m": best,
                       "sqrt_K": math.isqrt(K)})
    manifest = {"x": "m", "y": "predicted T_job", "curves": curves}
    return series, manifest


def build_fig6(cfgs, run_rows=None):
    cfg = cfgs[0]
    grid = [(K, math.isqrt(K), K // math.isqrt(K)) for K in cfg.K_values]
    rep = measure_eps_dec(grid, cfg.trials, cfg.seed, cfg.completion)
    series = {}
    mean_rows = []
    for (K, m, k), samples, mu, se in zip(rep.grid, rep.samples, rep.mean, rep.stderr):
        counts, edges = np.histogram(samples, bins=20)
        series[f"fig6_hist_K{K}"] = (("bin_low", "bin_high", "count"),
                                     list(zip(edges[:-1], edges[1:], counts)))
        mean_rows.append((K, mu, se, rep.lower_bound))
    series["fig6_mean"] = (("K", "eps_dec_mean", "eps_dec_stderr", "ideal_lower_bound"), mean_rows)
    manifest = {"x": "K", "y": "eps_dec", "grand_mean": rep.grand_mean,
                "curves": [{"file": "fig6_mean.csv", "baseline": "N = K"}]
                + [{"file": f"fig6_hist_K{K}.csv", "K": K} for K in cfg.K_values]}
    return series, manifest


def build_fig7(cfgs, run_rows):
    series, curves = {}, []
    groups = {}
    for row in run_rows:
        groups.setdefault((round(row["Gamma"] - 1, 6), row["policy"]), []).append(row)
    for (phi, policy), rows in sorted(groups.items()):
        finish, share = {}, {}
        for row in rows:
            for wid, t in row["finish"].items():
                finish.setdefault(wid, []).append(t)
            for wid, f in row["load_fractions"].items():
                share.setdefault(wid, []).append(f)
        out = [(wid, float(np.mean(finish.get(wid, [math.nan]))),
                100.0 * float(np.sum(share[wid])) / len(rows))
               for wid in sorted(share)]
        stem = f"fig7_phi{phi:.2f}_{policy}"
        series[stem] = (("node", "mean_finish_time", "contribution_percent"), out)
        times = [r[1] for r in out if math.isfinite(r[1])]
        curves.append({"file": stem + ".csv", "phi": phi, "policy": policy,
                       "finish_ratio_max_min": max(times) / min(times) if times else None,
                       "mean_L_exe": _mean_ci([r["L_exe"] for r in rows])[0]})
    return series, {"x": "node", "y": "finish time / contribution", "curves": curves}


def _by_gamma(run_rows, prefix):
    series, curves = {}, []
    groups = {}
    for row in run_rows:
        groups.setdefault((row["policy"], row["purging"]), {}).setdefault(row["Gamma"], []).append(row)
    for (policy, purging), by_g in groups.items():
        out = []
        for G in sorted(by_g):
            rows = by_g[G]
            mean, ci = _mean_ci([r["L_exe"] for r in rows])
            loads = [v for r in rows for v in r["delivered"].values() if math.isfinite(v)]
            out.append((G, mean, ci, float(np.mean(loads)) if loads else math.nan, len(rows)))
        stem = f"{prefix}_{policy}_{'purge' if purging else 'nopurge'}"
        series[stem] = (("Gamma", "L_exe_mean", "L_exe_ci95", "delivered_load", "jobs"), out)
        curves.append({"file": stem + ".csv", "policy": policy, "purging": purging})
    return series, {"x": "Gamma", "y": "mean L_exe", "curves": curves}


def build_fig8(cfgs, run_rows):
    return _by_gamma(run_rows, "fig8")


def build_fig9(cfgs, run_rows):
    return _by_gamma(run_rows, "fig9")


BUILDERS = {"fig5": build_fig5, "fig6": build_fig6, "fig7": build_fig7, "fig8": build_fig8,
            "fig9": build_fig9}
SIMULATED = {"fig7", "fig8", "fig9"}

