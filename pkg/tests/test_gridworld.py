import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iqlphase import gridworld as gw
from iqlphase.errors import IndexOutOfRange, InvalidConfig, StepAfterDone, UnsupportedCondition


def make_state(config, positions, goal):
    state = gw.reset(config, np.random.default_rng(0))
    state.agent_positions = np.array(positions, dtype=np.int64)
    state.goal_position = goal
    return state


@pytest.mark.parametrize("L,rho,n", [(8, 0.125, 8), (24, 0.03125, 18), (8, 0.03125, 2), (24, 0.5, 288), (32, 0.25, 256)])
def test_density_to_count(L, rho, n):
    assert gw.density_to_count(L, rho) == n


@pytest.mark.parametrize("L,rho", [(32, 0.5), (10, 0.125), (8, 0.3), (12, 0.5)])
def test_density_to_count_rejects(L, rho):
    with pytest.raises(UnsupportedCondition):
        gw.density_to_count(L, rho)


def test_supported_grid_has_19_conditions():
    conds = gw.supported_conditions()
    assert len(conds) == 19
    assert (32, 0.5) not in conds


def test_config_derived_quantities():
    cfg = gw.GridConfig.for_condition(16, 0.0625)
    assert cfg.agent_count == 16
    assert cfg.horizon == 128
    assert cfg.target_score == pytest.approx(12.8)
    assert cfg.obs_dim == 20
    assert gw.GridConfig.for_condition(16, 0.0625, id_enabled=False).obs_dim == 4


def test_config_capacity():
    cfg = gw.GridConfig(side_length=2, agent_count=3)
    state = gw.reset(cfg, np.random.default_rng(1))
    cells = {tuple(p) for p in state.agent_positions} | {state.goal_position}
    assert len(cells) == 4
    with pytest.raises(InvalidConfig):
        gw.GridConfig(side_length=2, agent_count=4)


def test_reset_distinct_and_reproducible():
    cfg = gw.GridConfig(side_length=8, agent_count=2)
    a = gw.reset(cfg, np.random.default_rng(42))
    b = gw.reset(cfg, np.random.default_rng(42))
    assert np.array_equal(a.agent_positions, b.agent_positions)
    assert a.goal_position == b.goal_position
    cells = {tuple(p) for p in a.agent_positions} | {a.goal_position}
    assert len(cells) == 3
    assert a.step_count == 0 and a.accumulated_reward == 0.0 and not a.reached.any()


def test_reset_varies_across_seeds():
    cfg = gw.GridConfig(side_length=8, agent_count=2)
    placements = set()
    for seed in range(100):
        s = gw.reset(cfg, np.random.default_rng(seed))
        placements.add((tuple(map(tuple, s.agent_positions)), s.goal_position))
    assert len(placements) > 1


def test_fixed_goal():
    cfg = gw.GridConfig(side_length=8, agent_count=10, fixed_goal=(3, 4))
    for seed in range(20):
        s = gw.reset(cfg, np.random.default_rng(seed))
        assert s.goal_position == (3, 4)
        assert (3, 4) not in {tuple(p) for p in s.agent_positions}


def test_all_stay_gives_step_penalty():
    cfg = gw.GridConfig(side_length=8, agent_count=3)
    s0 = gw.reset(cfg, np.random.default_rng(3))
    s1, r, done, _ = gw.step(s0, [gw.STAY] * 3, np.random.default_rng(0))
    assert np.all(r == -0.005)
    assert np.array_equal(s0.agent_positions, s1.agent_positions)
    assert not done and s1.step_count == 1


def test_single_agent_arrival_terminates():
    cfg = gw.GridConfig(side_length=8, agent_count=1)
    s = make_state(cfg, [(3, 3)], (3, 4))
    s1, r, done, reason = gw.step(s, [gw.RIGHT], np.random.default_rng(0))
    assert r[0] == pytest.approx(0.995, abs=1e-15)
    assert s1.reached[0] and s1.arrival_step[0] == 1
    assert done and reason == gw.TARGET_REACHED


def test_horizon_termination():
    cfg = gw.GridConfig(side_length=8, agent_count=2)
    s = gw.reset(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    steps = 0
    while not s.done:
        s, _, done, reason = gw.step(s, [gw.STAY, gw.STAY], rng)
        steps += 1
    assert steps == 64 and reason == gw.HORIZON
    with pytest.raises(StepAfterDone):
        gw.step(s, [0, 0], rng)


def test_offgrid_move_stays():
    cfg = gw.GridConfig(side_length=4, agent_count=1)
    s = make_state(cfg, [(0, 0)], (3, 3))
    s1, _, _, _ = gw.step(s, [gw.UP], np.random.default_rng(0))
    assert tuple(s1.agent_positions[0]) == (0, 0)
    s2, _, _, _ = gw.step(s1, [gw.LEFT], np.random.default_rng(0))
    assert tuple(s2.agent_positions[0]) == (0, 0)


def test_blocked_by_stationary_agent():
    cfg = gw.GridConfig(side_length=5, agent_count=2)
    s = make_state(cfg, [(2, 2), (2, 3)], (0, 0))
    s1, _, _, _ = gw.step(s, [gw.RIGHT, gw.STAY], np.random.default_rng(0))
    assert tuple(s1.agent_positions[0]) == (2, 2)


def test_follow_the_leader_allowed():
    cfg = gw.GridConfig(side_length=5, agent_count=2)
    s = make_state(cfg, [(2, 1), (2, 2)], (0, 0))
    s1, _, _, _ = gw.step(s, [gw.RIGHT, gw.RIGHT], np.random.default_rng(0))
    assert [tuple(p) for p in s1.agent_positions] == [(2, 2), (2, 3)]


def test_swap_cancelled():
    cfg = gw.GridConfig(side_length=5, agent_count=2)
    s = make_state(cfg, [(2, 1), (2, 2)], (0, 0))
    s1, _, _, _ = gw.step(s, [gw.RIGHT, gw.LEFT], np.random.default_rng(0))
    assert [tuple(p) for p in s1.agent_positions] == [(2, 1), (2, 2)]


def test_contested_cell_one_winner_both_outcomes_occur():
    cfg = gw.GridConfig(side_length=5, agent_count=2)
    winners = set()
    for seed in range(40):
        s = make_state(cfg, [(2, 1), (2, 3)], (0, 0))
        s1, _, _, _ = gw.step(s, [gw.RIGHT, gw.LEFT], np.random.default_rng(seed))
        pos = [tuple(p) for p in s1.agent_positions]
        assert pos.count((2, 2)) == 1
        winners.add(pos.index((2, 2)))
    assert winners == {0, 1}


def test_chain_cancelled_when_leader_loses():
    # agent 2 loses the contest for (2,2) and stays, so agent 3 queued behind it must stay too
    cfg = gw.GridConfig(side_length=6, agent_count=3)
    for seed in range(20):
        s = make_state(cfg, [(1, 2), (2, 1), (2, 0)], (5, 5))
        s1, _, _, _ = gw.step(s, [gw.DOWN, gw.RIGHT, gw.RIGHT], np.random.default_rng(seed))
        pos = [tuple(p) for p in s1.agent_positions]
        assert len(set(pos)) == 3
        if pos[0] == (2, 2):
            assert pos[1] == (2, 1) and pos[2] == (2, 0)
        else:
            assert pos == [(1, 2), (2, 2), (2, 1)]


def test_simultaneous_arrivals_at_goal_do_not_block():
    cfg = gw.GridConfig(side_length=5, agent_count=2)
    s = make_state(cfg, [(2, 1), (2, 3)], (2, 2))
    s1, r, done, reason = gw.step(s, [gw.RIGHT, gw.LEFT], np.random.default_rng(0))
    assert s1.reached.all()
    assert np.allclose(r, 0.995)
    assert done and reason == gw.TARGET_REACHED


def test_reached_agent_holds_and_does_not_block():
    cfg = gw.GridConfig(side_length=5, agent_count=3)
    s = make_state(cfg, [(2, 1), (4, 4), (0, 0)], (2, 2))
    s, r, _, _ = gw.step(s, [gw.RIGHT, gw.STAY, gw.STAY], np.random.default_rng(0))
    assert s.reached[0]
    s, r, _, _ = gw.step(s, [gw.LEFT, gw.STAY, gw.STAY], np.random.default_rng(0))
    assert tuple(s.agent_positions[0]) == (2, 2) and r[0] == 0.0
    assert s.arrival_step[0] == 1


def test_observe_examples():
    cfg = gw.GridConfig(side_length=8, agent_count=2)
    s = make_state(cfg, [(0, 0), (1, 1)], (7, 7))
    assert np.array_equal(gw.observe(s, 0), [0, 0, 0.875, 0.875, 1, 0])
    cfg_noid = gw.GridConfig(side_length=8, agent_count=2, id_enabled=False)
    s_noid = make_state(cfg_noid, [(0, 0), (1, 1)], (7, 7))
    assert np.array_equal(gw.observe(s_noid, 0), [0, 0, 0.875, 0.875])
    with pytest.raises(IndexOutOfRange):
        gw.observe(s, 2)


def test_observe_symmetry_without_ids():
    cfg = gw.GridConfig(side_length=8, agent_count=2, id_enabled=False)
    s = make_state(cfg, [(3, 3), (5, 1)], (7, 7))
    s.agent_positions[1] = (3, 3)  # forced overlap, only to probe the observation map
    assert np.array_equal(gw.observe(s, 0), gw.observe(s, 1))


@settings(max_examples=60, deadline=None)
@given(
    L=st.integers(2, 7),
    fill=st.floats(0.05, 0.9),
    seed=st.integers(0, 2**32 - 1),
)
def test_random_rollout_invariants(L, fill, seed):
    N = max(1, min(L * L - 1, int(fill * L * L)))
    cfg = gw.GridConfig(side_length=L, agent_count=N)
    rng = np.random.default_rng(seed)
    s = gw.reset(cfg, rng)
    emitted = 0.0
    prev_reached = s.reached.copy()
    prev_arrival = list(s.arrival_step)
    steps = 0
    while not s.done:
        s, r, _, _ = gw.step(s, rng.integers(0, 5, size=N), rng)
        steps += 1
        emitted += math.fsum(r)
        active = s.active
        cells = [tuple(p) for p in s.agent_positions[active]]
        assert len(cells) == len(set(cells))
        assert (s.agent_positions >= 0).all() and (s.agent_positions < L).all()
        assert abs(s.accumulated_reward - emitted) <= 1e-12
        assert (s.reached | ~prev_reached).all()
        for i in range(N):
            if prev_arrival[i] is not None:
                assert s.arrival_step[i] == prev_arrival[i]
            assert (s.arrival_step[i] is not None) == bool(s.reached[i])
            if s.reached[i]:
                assert s.arrival_step[i] <= s.step_count
        prev_reached, prev_arrival = s.reached.copy(), list(s.arrival_step)
    assert steps <= 8 * L


def test_trajectory_determinism():
    cfg = gw.GridConfig.for_condition(8, 0.25)

    def rollout():
        rng = np.random.default_rng(7)
        act = np.random.default_rng(8)
        s = gw.reset(cfg, rng)
        trace = []
        while not s.done:
            s, r, _, _ = gw.step(s, act.integers(0, 5, size=cfg.agent_count), rng)
            trace.append((s.agent_positions.tobytes(), r.tobytes()))
        return trace

    assert rollout() == rollout()
