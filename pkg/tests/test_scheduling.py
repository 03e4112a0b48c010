import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from redc.errors import (EmptyValidSet, Infeasible, InsufficientCapacity, NoFeasibleStrategy,
                         UnstableQueue)
from redc.scheduling import (NodeRates, Strategy, SystemParams, Timing, divisors,
                             evaluate_strategy, fingerprint, job_sizes, node_rates, optimal_split,
                             pk_latency, predict_job_latency, select_node_set, split_gradient,
                             split_objective, strategy_search, uniform_split, valid_workers)
from redc.worker_models import Exponential, WorkerProfile


def rates(r, c, a):
    n = len(r)
    return NodeRates(np.arange(n), np.asarray(r, float), np.asarray(c, float), np.asarray(a, float))


def mm1_rates(mu, ups):
    # exponential job service: E[T] = 1/mu, E[T^2] = 2/mu^2
    mu = np.asarray(mu, float)
    return node_rates(np.arange(len(mu)), 1 / mu, 2 / mu ** 2, np.ones(len(mu)), 1.0, 1.0, ups)


# -- valid workers / node set ---------------------------------------------------

def test_slow_uplink_excluded():
    t = Timing(0.1, 0.1, np.array([0.5, 10.0]), np.array([0.1, 0.1]), np.array([1.0, 1.0]))
    assert valid_workers([0, 1], t) == [0]


def test_homogeneous_fast_codec_all_kept():
    t = Timing(0.1, 0.1, np.full(4, 0.2), np.full(4, 0.2), np.full(4, 1.0))
    assert valid_workers(range(4), t) == [0, 1, 2, 3]


def test_empty_valid_set():
    t = Timing(5.0, 0.1, np.array([0.1]), np.array([0.1]), np.array([1.0]))
    with pytest.raises(EmptyValidSet):
        valid_workers([0], t)


def test_singleton_node_set():
    assert select_node_set([0], rates([2.0], [1], [1]), 0.5, 0.1) == [0]


def test_prefix_of_four():
    assert select_node_set(list(range(5)), rates([0.3] * 5, [1] * 5, [1] * 5), 0.09, 0.05) == [0, 1, 2, 3]


def test_node_set_sorted_by_capacity():
    assert select_node_set([0, 1, 2], rates([0.2, 0.9, 0.5], [1] * 3, [1] * 3), 0.3, 0.0) == [1, 2]


def test_node_set_errors():
    with pytest.raises(InsufficientCapacity):
        select_node_set([0, 1], rates([0.3, 0.3], [1, 1], [1, 1]), 0.1, 0.0)
    with pytest.raises(ValueError):
        select_node_set([0], rates([5.0], [1], [1]), 0.01, 0.1)


# -- latency ---------------------------------------------------------------------

@given(st.floats(0.5, 1e4), st.floats(1e-4, 1.0), st.floats(0.001, 0.99))
@settings(max_examples=200)
def test_pk_reduces_to_mm1(mu, ups, load):
    rr = mm1_rates([mu], ups)
    gamma = load * rr.r_comp[0]
    L = pk_latency(rr.r_comp[0], rr.a[0], gamma, ups)
    assert L == pytest.approx(1 / (mu - ups * gamma), rel=1e-12)


def test_pk_limits():
    rr = mm1_rates([2.0], 0.5)
    assert pk_latency(rr.r_comp, rr.a, 1e-12, 0.5) == pytest.approx(0.5)
    assert pk_latency(rr.r_comp, rr.a, rr.r_comp[0] * (1 - 1e-9), 0.5) > 1e6
    with pytest.raises(UnstableQueue):
        pk_latency(rr.r_comp, rr.a, rr.r_comp[0], 0.5)


def test_single_worker_prediction():
    rr = rates([3.0], [2.0], [0.4])
    Lc, Lm, L = predict_job_latency(rr, [1.5], 0.1, 2.0, 1.0)
    assert Lc == pytest.approx((0.4 * 2.25 / 1.5 + 0.5) / 0.1)
    assert Lm == pytest.approx(1.5 / (0.1 * 2.0))
    assert L == pytest.approx(Lc + Lm + 3.0)


def test_two_identical_workers_even_split():
    one = rates([3.0], [2.0], [0.4])
    two = rates([3.0, 3.0], [2.0, 2.0], [0.4, 0.4])
    assert predict_job_latency(two, [0.6, 0.6], 0.1, 0, 0)[0] == pytest.approx(
        predict_job_latency(one, [0.6], 0.1, 0, 0)[0])


# -- optimal split -------------------------------------------------------------------

def test_identical_workers_equal_split():
    g, _ = optimal_split(rates([1.0] * 4, [2.0] * 4, [0.3] * 4), 1.2)
    assert np.allclose(g, 0.3, atol=1e-12)


def test_no_comm_capacity_pinned_to_floor():
    rr = rates([1.0, 1.0, 1.0], [5.0, 5.0, 1e-9], [0.2, 0.2, 0.2])
    g, _ = optimal_split(rr, 1.2, [0.0, 0.0, 0.05])
    assert g[2] == pytest.approx(0.05)
    assert g.sum() == pytest.approx(1.2, abs=1e-9)


def test_infeasible_budget():
    with pytest.raises(Infeasible):
        optimal_split(rates([0.5, 0.5], [1, 1], [0.1, 0.1]), 1.0)


def grid_min(rr, Gamma, step=1e-3):
    n = len(rr)
    if n == 2:
        g1 = np.arange(0, Gamma + step / 2, step)
        G = np.stack([g1, Gamma - g1], axis=1)
    else:
        g1, g2 = np.meshgrid(np.arange(0, Gamma + step / 2, step), np.arange(0, Gamma + step / 2, step))
        G = np.stack([g1.ravel(), g2.ravel(), Gamma - g1.ravel() - g2.ravel()], axis=1)
    G = G[np.all(G >= 0, axis=1) & np.all(G < rr.r_comp, axis=1)]
    r, a, c = rr.r_comp, rr.a, rr.r_comm
    f = np.sum(a * G ** 2 / (r - G) + G * (1 / r + 1 / c), axis=1)
    return f.min()


def random_instance(rng, n):
    r = rng.uniform(0.3, 2.0, n)
    c = rng.uniform(0.5, 10.0, n)
    a = rng.uniform(0.01, 2.0, n)
    Gamma = rng.uniform(0.3, 0.9) * r.sum() * 0.999
    return rates(r, c, a), Gamma


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([2, 3]))
@settings(max_examples=25, deadline=None)
def test_split_properties(seed, n):
    rr, Gamma = random_instance(np.random.default_rng(seed), n)
    g, eta = optimal_split(rr, Gamma)
    assert abs(g.sum() - Gamma) < 1e-9
    assert np.all(g >= 0) and np.all(g <= 0.999 * rr.r_comp)
    interior = (g > 1e-12) & (g < 0.999 * rr.r_comp - 1e-12)
    grad = split_gradient(rr, g)
    assert np.all(np.abs(grad[interior] - eta) < 1e-6)
    # boundary coordinates at zero cannot profit from load
    assert np.all(grad[g <= 1e-12] >= eta - 1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_split_matches_grid(seed):
    rr, Gamma = random_instance(np.random.default_rng(100 + seed), 2 + seed % 2)
    g, _ = optimal_split(rr, Gamma)
    assert split_objective(rr, g) <= grid_min(rr, Gamma) + 1e-9


def test_eta_monotone():
    from redc.scheduling import _gamma_of_eta
    rr, _ = random_instance(np.random.default_rng(9), 4)
    etas = np.linspace(0, 50, 400)
    sums = [np.sum(_gamma_of_eta(rr, e, np.zeros(4))) for e in etas]
    assert np.all(np.diff(sums) >= -1e-12)


def test_uniform_split():
    assert np.allclose(uniform_split(4, 1.2), 0.3)


# -- strategy search ------------------------------------------------------------------

def fleet(mus, bw=500.0):
    return [WorkerProfile(i, Exponential(mu), bw) for i, mu in enumerate(mus)]


PARAMS = SystemParams(100, 100, 100, upsilon=1e-3, use_estimates=False)


def test_job_sizes():
    sz = job_sizes(PARAMS, Strategy(100, 10, 10))
    assert (sz.D_in, sz.D_out, sz.cu_work) == (2000.0, 100.0, 10000.0)
    assert sz.eps_dec == pytest.approx(0.143)
    assert sz.dec_symbol(100) == pytest.approx(100 * math.log(100) / 1.143)


def test_single_candidate_returned():
    fl = fleet([400, 350, 300, 250])
    st_ = Strategy(100, 10, 10, 1.2)
    dec = strategy_search(fl, [st_], PARAMS)
    assert dec.strategy.K == 100 and dec.Gamma == 1.2
    assert dec.L_exe == pytest.approx(evaluate_strategy(fl, st_, PARAMS).L_exe)
    assert abs(sum(dec.gamma) - 1.2) < 1e-9


def test_default_gamma_decomposition():
    dec = evaluate_strategy(fleet([800, 700, 600]), Strategy(100, 10, 10), PARAMS)
    assert dec.Gamma == pytest.approx(1 + 0.143 + PARAMS.eps_straggler)


def test_dominant_candidate_selected():
    fl = fleet([600, 500, 400, 300])
    better = Strategy(100, 10, 10, 1.1)
    worse = Strategy(100, 10, 10, 1.4)  # same code, more load everywhere
    assert strategy_search(fl, [worse, better], PARAMS).Gamma == 1.1


def test_sqrt_k_wins_on_random_fleet():
    rng = np.random.default_rng(0)
    fl = [WorkerProfile(i, Exponential(max(mu, 1e-9)), max(b, 1e-9))
          for i, (mu, b) in enumerate(zip(rng.uniform(0, 2500, 150), rng.uniform(0, 1000, 150)))]
    params = SystemParams(100, 100, 100, 1e-3, use_estimates=False)
    cands = [Strategy(100, m, 100 // m, 1.3) for m in divisors(100)]
    assert strategy_search(fl, cands, params).strategy.m == 10


def test_no_feasible_strategy():
    with pytest.raises(NoFeasibleStrategy):
        strategy_search(fleet([10, 10]), [Strategy(100, 10, 10, 1.2)], PARAMS)


def test_cache_hit_on_fingerprint():
    fl = fleet([400, 350, 300, 250])
    cache = {}
    a = strategy_search(fl, [Strategy(100, 10, 10, 1.2)], PARAMS, cache)
    b = strategy_search(fl, [Strategy(100, 10, 10, 1.2)], PARAMS, cache)
    assert a is b and len(cache) == 1
    assert fingerprint(fl, PARAMS) == fingerprint(fleet([401, 350, 300, 250]), PARAMS)


def test_divisors():
    assert divisors(49) == [1, 7, 49]
