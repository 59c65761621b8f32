import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iqlphase import metrics as m
from iqlphase.errors import DegenerateNormalizer, EmptyWindow
from iqlphase.records import EpisodeRow, EvalRow, RunRecord


def ep_row(k, td_var=0.0, grad_var=0.0, grad_mean=0.1):
    return EpisodeRow(k, 10, 0.9, "target_reached", 0.1, 10, 640, 0.0, td_var, 10, grad_mean, grad_var,
                      0.0, 1.0, [5, 6])


def ev_row(k, ok=True):
    return EvalRow(k, 0, 10, [4, 6] if ok else [4, None], 64)


def synthetic_run(n_ep, td_var, grad_var=0.0, seed=0, eval_every=10, ok=True):
    eps = [ep_row(k, td_var(k) if callable(td_var) else td_var, grad_var) for k in range(n_ep)]
    evs = [ev_row(k, ok) for k in range(eval_every - 1, n_ep, eval_every)]
    return RunRecord({"L": 8, "rho": 0.03125, "seed": seed, "horizon": 64, "episodes_run": n_ep}, eps, evs)


def test_csr_examples():
    assert m.csr([True] * 10) == 1.0
    assert m.csr([False] * 10) == 0.0
    assert m.csr([True, True, False, True]) == 0.75
    with pytest.raises(EmptyWindow):
        m.csr([])


def test_td_variance_examples():
    assert m.episode_variance([0.3, 0.3, 0.3]) == 0.0
    assert m.episode_variance([-1.0, 1.0]) == 1.0
    assert m.td_variance([np.array([2.0, 2.0]), np.array([-1.0, 1.0])]) == 0.5
    assert m.episode_variance([1.0]) is None
    # an episode with a single sample is skipped rather than counted as zero
    assert m.td_variance([np.array([5.0]), np.array([-1.0, 1.0])]) == 1.0


def test_stability_index_examples():
    assert m.stability_index(2.5, 2.5) == 0.0
    assert m.stability_index(0.0, 2.5) == 1.0
    assert m.stability_index(1.25, 2.5) == 0.5
    assert m.grad_stability_index(3.0, 3.0) == 0.0 and m.grad_stability_index(0.0, 3.0) == 1.0
    with pytest.raises(DegenerateNormalizer):
        m.stability_index(0.0, 0.0)


@given(v=st.floats(0, 1e6), extra=st.floats(1e-9, 1e6))
def test_stability_index_in_unit_interval(v, extra):
    s = m.stability_index(v, v + extra)
    assert 0.0 <= s <= 1.0


def test_spread_examples():
    assert m.arrival_spread([12, 12, 12], 64) == 0.0
    assert m.arrival_spread([10, 30], 64) == 10.0
    assert m.arrival_spread([10, None], 64) == 27.0


def test_co_reach_and_rho_eff():
    assert m.co_reach([1, 2]) == 1.0
    assert m.co_reach([None, None]) == 0.0
    assert m.co_reach([1, None, 3, 4]) == 0.75
    assert m.rho_eff(0.25, 0.0) == 0.0
    assert abs(m.rho_eff(0.125, 0.8) - 0.1) <= 1e-12
    assert m.rho_eff(0.0625, 1.0) == 0.0625


@pytest.mark.parametrize("n,start,size", [(400, 300, 100), (1500, 1125, 375), (10, 7, 3), (1, 0, 1), (50, 37, 13)])
def test_window(n, start, size):
    assert m.window_size(n) == size
    assert m.window_start(n) == start


def test_condition_stats_window_and_values():
    # td variance 100 outside the window, 0.5 / 1.5 alternating inside it
    td = lambda k: 100.0 if k < 300 else (0.5 if k % 2 else 1.5)
    runs = [synthetic_run(400, td, seed=s) for s in range(3)]
    st_ = m.condition_stats(8, 0.03125, 2, runs)
    assert st_.window_start == 300
    assert st_.window_episode_indices == list(range(300, 400))
    assert st_.window_episodes == 300
    assert abs(st_.v - 1.0) <= 1e-12
    assert st_.k_eval == 3 * 10
    assert st_.csr == 1.0 and st_.rho_eff == 0.03125
    assert st_.spread_mean == 1.0  # eval arrivals 4 and 6


def test_condition_stats_csr_and_ci():
    runs = [synthetic_run(100, 0.2, seed=0, ok=True), synthetic_run(100, 0.2, seed=1, ok=False)]
    st_ = m.condition_stats(8, 0.03125, 2, runs)
    assert st_.csr == 0.5
    assert st_.csr_ci == pytest.approx(m.Z95 * np.std([1.0, 0.0], ddof=1) / math.sqrt(2))
    assert st_.co_reach_mean == 0.75


def test_condition_stats_missing_variance_is_nan():
    run = synthetic_run(20, 0.0)
    for e in run.episodes:
        e.td_var = None
        e.grad_var = None
    st_ = m.condition_stats(8, 0.03125, 2, [run])
    assert math.isnan(st_.v) and math.isnan(st_.grad_var)


def test_apply_stability_normalises_by_sweep_max():
    conds = []
    for v in (0.2, 0.8, 0.4):
        conds.append(m.condition_stats(8, 0.03125, 2, [synthetic_run(40, v, grad_var=v)]))
    m.apply_stability(conds)
    assert [c.S for c in conds] == pytest.approx([0.75, 0.0, 0.5], abs=1e-12)


def test_s_and_s_grad_can_rank_differently():
    # condition A: noisy TD errors, calm gradients; condition B the reverse
    a = m.condition_stats(8, 0.03125, 2, [synthetic_run(40, 2.0, grad_var=0.1)])
    b = m.condition_stats(8, 0.0625, 4, [synthetic_run(40, 0.5, grad_var=0.9)])
    m.apply_stability([a, b])
    assert a.S < b.S
    assert a.S_grad > b.S_grad


def test_timeseries_means_across_seeds():
    runs = [synthetic_run(5, float(s)) for s in range(4)]
    ts = m.episode_timeseries(runs)
    assert len(ts) == 5
    assert ts[0]["td_var_mean"] == 1.5 and ts[0]["seeds"] == 4


def test_mean_ci_single_value():
    assert m.mean_ci([0.4]) == (0.4, 0.0)
    assert all(math.isnan(x) for x in m.mean_ci([]))
