import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from iqlphase.errors import DimensionMismatch, WarmupNotReached
from iqlphase.replay import ReplayBuffer, Transition


def tr(k, dim=2):
    return Transition(np.full(dim, float(k)), k % 5, float(k), np.full(dim, k + 0.5), False, k % 3)


def fill(buf, n, dim=2):
    k = np.arange(n)
    obs = np.repeat(k[:, None].astype(float), dim, axis=1)
    buf.push_many(obs, k % 5, k.astype(float), obs + 0.5, np.zeros(n, bool), k % 3)


def test_fifo_capacity_three():
    buf = ReplayBuffer(2, capacity=3, warm_up=1)
    for k in range(4):
        buf.push(tr(k))
    assert [t.reward for t in buf.contents()] == [1.0, 2.0, 3.0]


def test_push_preserves_fields():
    buf = ReplayBuffer(2, capacity=10, warm_up=1)
    buf.push(tr(7))
    (got,) = buf.contents()
    assert np.array_equal(got.obs, [7, 7]) and np.array_equal(got.next_obs, [7.5, 7.5])
    assert (got.action, got.reward, got.done, got.agent_index) == (2, 7.0, False, 1)


def test_full_capacity_eviction():
    cap = 100_000
    buf = ReplayBuffer(1, capacity=cap, warm_up=1)
    fill(buf, cap + 1, dim=1)
    assert len(buf) == cap
    serials = buf.serials()
    assert serials[0] == 1 and serials[-1] == cap
    assert np.array_equal(serials, np.arange(1, cap + 1))


@settings(max_examples=40, deadline=None)
@given(cap=st.integers(1, 20), blocks=st.lists(st.integers(1, 30), min_size=1, max_size=8))
def test_block_pushes_match_sequential_fifo(cap, blocks):
    buf = ReplayBuffer(1, capacity=cap, warm_up=1)
    total = 0
    for b in blocks:
        k = np.arange(total, total + b)
        buf.push_many(k[:, None].astype(float), k % 5, k.astype(float), k[:, None] + 0.5, np.zeros(b, bool), k % 3)
        total += b
        expected = list(range(max(0, total - cap), total))
        assert [int(t.reward) for t in buf.contents()] == expected
        assert len(buf) == min(total, cap)


def test_warm_up_boundary():
    buf = ReplayBuffer(2, capacity=5000, warm_up=1500)
    fill(buf, 1499)
    with pytest.raises(WarmupNotReached):
        buf.sample(64, np.random.default_rng(0))
    buf.push(tr(1499))
    batch = buf.sample(64, np.random.default_rng(0))
    assert len(batch) == 64


def test_sample_shapes_and_membership():
    buf = ReplayBuffer(3, capacity=50, warm_up=10)
    fill(buf, 80, dim=3)
    batch = buf.sample(64, np.random.default_rng(1))
    assert batch.obs.shape == (64, 3) and batch.next_obs.shape == (64, 3)
    assert set(batch.rewards.astype(int)) <= set(range(30, 80))
    for t in batch.transitions():
        assert t.obs[0] == t.reward and t.action == int(t.reward) % 5


def test_dimension_check():
    buf = ReplayBuffer(3, capacity=5, warm_up=1)
    with pytest.raises(DimensionMismatch):
        buf.push(tr(0, dim=2))


def test_sampling_is_uniform_chi_square():
    size, draws = 10, 100_000
    buf = ReplayBuffer(1, capacity=size, warm_up=1)
    fill(buf, size, dim=1)
    b = buf.sample(draws, np.random.default_rng(2024))
    counts = np.bincount(b.rewards.astype(int), minlength=size)
    assert counts.sum() == draws
    assert stats.chisquare(counts).statistic <= stats.chi2.ppf(1 - 1e-3, size - 1)


def test_sampling_reproducible_from_seed():
    buf = ReplayBuffer(1, capacity=100, warm_up=1)
    fill(buf, 100, dim=1)
    a = buf.sample(64, np.random.default_rng(5))
    b = buf.sample(64, np.random.default_rng(5))
    assert np.array_equal(a.slots, b.slots)
