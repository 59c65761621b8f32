"""L x L multi-agent navigation grid with a single shared goal.

Agents move simultaneously. Conflicting moves are resolved by repeated
cancellation passes (blocked by a stationary agent, head-on swap, or
contested target cell) until the joint move is consistent. Agents that reach
the goal switch to ``hold``: they stop occupying space, receive no further
reward and generate no transitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import IndexOutOfRange, InvalidConfig, StepAfterDone, UnsupportedCondition

STAY, UP, DOWN, LEFT, RIGHT = range(5)
ACTIONS = ("stay", "up", "down", "left", "right")
N_ACTIONS = len(ACTIONS)
MOVES = np.array([(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)], dtype=np.int64)

STEP_PENALTY = -0.005
GOAL_REWARD = 1.0
TARGET_FRACTION = 0.8
HORIZON_PER_SIDE = 8

SIDE_LENGTHS = (8, 16, 24, 32)
DENSITIES = (0.03125, 0.0625, 0.125, 0.25, 0.5)
EXCLUDED = frozenset({(32, 0.5)})

TARGET_REACHED = "target_reached"
HORIZON = "horizon"


def supported_conditions() -> list[tuple[int, float]]:
    """All (L, rho) pairs of the experimental grid, in row-major order."""
    return [(L, rho) for L in SIDE_LENGTHS for rho in DENSITIES if (L, rho) not in EXCLUDED]


def density_to_count(L: int, rho: float) -> int:
    """Number of agents ``rho * L**2`` for a supported condition."""
    if L not in SIDE_LENGTHS or rho not in DENSITIES or (L, rho) in EXCLUDED:
        supported = ", ".join(f"({a}, {b})" for a, b in supported_conditions())
        raise UnsupportedCondition(f"unsupported condition (L={L}, rho={rho}); supported: {supported}")
    n = Fraction(rho) * L * L
    if n.denominator != 1:
        raise UnsupportedCondition(f"rho * L^2 = {n} is not an integer")
    return int(n)


@dataclass(frozen=True)
class GridConfig:
    side_length: int
    agent_count: int
    id_enabled: bool = True
    rng_seed: int = 0
    density: Optional[float] = None
    fixed_goal: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        L, N = self.side_length, self.agent_count
        if L < 1 or N < 1:
            raise InvalidConfig(f"side_length and agent_count must be positive, got L={L}, N={N}")
        if N + 1 > L * L:
            raise InvalidConfig(f"{N} agents plus a goal do not fit on a {L}x{L} grid")
        if self.density is not None and Fraction(self.density) * L * L != N:
            raise InvalidConfig(f"agent_count {N} != density {self.density} * {L}^2")
        if self.fixed_goal is not None:
            r, c = self.fixed_goal
            if not (0 <= r < L and 0 <= c < L):
                raise InvalidConfig(f"fixed_goal {self.fixed_goal} lies outside the grid")

    @classmethod
    def for_condition(cls, L: int, rho: float, **kwargs) -> "GridConfig":
        return cls(side_length=L, agent_count=density_to_count(L, rho), density=rho, **kwargs)

    @property
    def horizon(self) -> int:
        return HORIZON_PER_SIDE * self.side_length

    @property
    def target_score(self) -> float:
        return TARGET_FRACTION * self.agent_count

    @property
    def obs_dim(self) -> int:
        return 4 + (self.agent_count if self.id_enabled else 0)


@dataclass
class EnvState:
    config: GridConfig
    agent_positions: np.ndarray  # (N, 2) int64, row/col
    goal_position: tuple[int, int]
    reached: np.ndarray  # (N,) bool
    arrival_step: list[Optional[int]]
    step_count: int = 0
    accumulated_reward: float = 0.0
    done: bool = False
    done_reason: Optional[str] = None

    @property
    def active(self) -> np.ndarray:
        """Indices of agents that have not reached the goal."""
        return np.flatnonzero(~self.reached)

    def copy(self) -> "EnvState":
        return EnvState(
            config=self.config,
            agent_positions=self.agent_positions.copy(),
            goal_position=self.goal_position,
            reached=self.reached.copy(),
            arrival_step=list(self.arrival_step),
            step_count=self.step_count,
            accumulated_reward=self.accumulated_reward,
            done=self.done,
            done_reason=self.done_reason,
        )


def reset(config: GridConfig, rng: np.random.Generator) -> EnvState:
    """Place N agents and the goal on distinct cells drawn uniformly."""
    L, N = config.side_length, config.agent_count
    if config.fixed_goal is None:
        cells = rng.choice(L * L, size=N + 1, replace=False)
        goal = divmod(int(cells[0]), L)
        agent_cells = cells[1:]
    else:
        goal = tuple(config.fixed_goal)
        free = np.delete(np.arange(L * L), goal[0] * L + goal[1])
        agent_cells = rng.choice(free, size=N, replace=False)
    positions = np.stack(np.divmod(agent_cells.astype(np.int64), L), axis=1)
    return EnvState(
        config=config,
        agent_positions=positions,
        goal_position=(int(goal[0]), int(goal[1])),
        reached=np.zeros(N, dtype=bool),
        arrival_step=[None] * N,
    )


def _resolve_moves(
    positions: np.ndarray,
    agents: np.ndarray,
    actions: np.ndarray,
    L: int,
    goal: tuple[int, int],
    rng: np.random.Generator,
) -> dict[int, tuple[int, int]]:
    """Final cell for every active agent after simultaneous conflict resolution."""
    current = {int(i): (int(positions[i, 0]), int(positions[i, 1])) for i in agents}
    target = {}
    for i, a in zip(agents, actions):
        i = int(i)
        r, c = current[i]
        dr, dc = MOVES[int(a)]
        nr, nc = r + int(dr), c + int(dc)
        target[i] = (nr, nc) if 0 <= nr < L and 0 <= nc < L else (r, c)
    moving = {i for i in current if target[i] != current[i]}
    occupant = {cell: i for i, cell in current.items()}

    changed = True
    while changed:
        changed = False
        stationary_cells = {current[i] for i in current if i not in moving}
        cancel = set()
        for i in sorted(moving):
            t = target[i]
            if t in stationary_cells:
                cancel.add(i)
                continue
            j = occupant.get(t)
            if j is not None and j in moving and target[j] == current[i]:
                cancel.update((i, j))
        if cancel:
            moving -= cancel
            changed = True
            continue
        contenders: dict[tuple[int, int], list[int]] = {}
        for i in sorted(moving):
            if target[i] != goal:
                contenders.setdefault(target[i], []).append(i)
        for cell in sorted(contenders):
            group = contenders[cell]
            if len(group) > 1:
                winner = group[int(rng.integers(len(group)))]
                moving -= {i for i in group if i != winner}
                changed = True
    return {i: (target[i] if i in moving else current[i]) for i in current}


def step(
    state: EnvState, joint_action: Sequence[int], rng: np.random.Generator
) -> tuple[EnvState, np.ndarray, bool, Optional[str]]:
    """Advance one step. Returns (next_state, per-agent rewards, done, done_reason)."""
    cfg = state.config
    N = cfg.agent_count
    if state.done:
        raise StepAfterDone("episode already terminated; call reset()")
    joint_action = np.asarray(joint_action, dtype=np.int64)
    if joint_action.shape != (N,):
        raise InvalidConfig(f"expected {N} actions, got shape {joint_action.shape}")
    if np.any((joint_action < 0) | (joint_action >= N_ACTIONS)):
        raise InvalidConfig(f"actions must lie in 0..{N_ACTIONS - 1}")

    nxt = state.copy()
    nxt.step_count = state.step_count + 1
    active = state.active
    rewards = np.zeros(N, dtype=np.float64)
    if active.size:
        final = _resolve_moves(
            state.agent_positions, active, joint_action[active], cfg.side_length, state.goal_position, rng
        )
        for i, cell in final.items():
            nxt.agent_positions[i] = cell
            rewards[i] = STEP_PENALTY
            if cell == state.goal_position:
                rewards[i] += GOAL_REWARD
                nxt.reached[i] = True
                nxt.arrival_step[i] = nxt.step_count

    step_total = math.fsum(rewards)
    nxt.accumulated_reward = state.accumulated_reward + step_total
    if nxt.accumulated_reward >= cfg.target_score:
        nxt.done, nxt.done_reason = True, TARGET_REACHED
    elif nxt.step_count >= cfg.horizon:
        nxt.done, nxt.done_reason = True, HORIZON
    return nxt, rewards, nxt.done, nxt.done_reason


def observe_many(state: EnvState, agents: np.ndarray) -> np.ndarray:
    """Observation rows for the given agent indices (see :func:`observe`)."""
    cfg = state.config
    L, N = cfg.side_length, cfg.agent_count
    agents = np.asarray(agents, dtype=np.int64)
    if agents.size and (agents.min() < 0 or agents.max() >= N):
        raise IndexOutOfRange(f"agent index out of range 0..{N - 1}")
    obs = np.zeros((agents.size, cfg.obs_dim), dtype=np.float64)
    obs[:, 0:2] = state.agent_positions[agents] / L
    obs[:, 2] = state.goal_position[0] / L
    obs[:, 3] = state.goal_position[1] / L
    if cfg.id_enabled:
        obs[np.arange(agents.size), 4 + agents] = 1.0
    return obs


def observe(state: EnvState, agent_index: int, config: Optional[GridConfig] = None) -> np.ndarray:
    """[row/L, col/L, goal_row/L, goal_col/L] plus a one-hot agent id when enabled."""
    if config is not None and config != state.config:
        state = state.copy()
        state.config = config
    N = state.config.agent_count
    if not 0 <= agent_index < N:
        raise IndexOutOfRange(f"agent index {agent_index} out of range 0..{N - 1}")
    return observe_many(state, np.array([agent_index]))[0]
