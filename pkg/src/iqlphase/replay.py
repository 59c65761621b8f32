"""Shared FIFO experience buffer with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, WarmupNotReached

CAPACITY = 100_000
WARM_UP = 1500
BATCH_SIZE = 64


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    agent_index: int


@dataclass
class TransitionBatch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    agent_indices: np.ndarray
    slots: np.ndarray  # storage positions the batch was drawn from

    def __len__(self) -> int:
        return len(self.actions)

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.obs[k], int(self.actions[k]), float(self.rewards[k]),
                       self.next_obs[k], bool(self.dones[k]), int(self.agent_indices[k]))
            for k in range(len(self))
        ]


class ReplayBuffer:
    """Ring buffer backed by preallocated arrays.

    Storage grows lazily in chunks so a small run does not allocate the
    full capacity up front.
    """

    def __init__(self, obs_dim: int, capacity: int = CAPACITY, warm_up: int = WARM_UP):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.obs_dim = obs_dim
        self.capacity = capacity
        self.warm_up = warm_up
        self.size = 0
        self.cursor = 0
        self.pushes = 0
        self._alloc = 0
        self._obs = np.empty((0, obs_dim))
        self._next_obs = np.empty((0, obs_dim))
        self._actions = np.empty(0, dtype=np.int64)
        self._rewards = np.empty(0)
        self._dones = np.empty(0, dtype=bool)
        self._agents = np.empty(0, dtype=np.int64)
        self._serial = np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return self.size

    @property
    def ready(self) -> bool:
        return self.size >= self.warm_up

    def _grow(self, needed: int) -> None:
        if needed <= self._alloc:
            return
        new = min(self.capacity, max(needed, 2 * self._alloc, 4096))

        def extend(arr: np.ndarray) -> np.ndarray:
            out = np.empty((new,) + arr.shape[1:], dtype=arr.dtype)
            out[: self._alloc] = arr
            return out

        self._obs, self._next_obs = extend(self._obs), extend(self._next_obs)
        self._actions, self._rewards = extend(self._actions), extend(self._rewards)
        self._dones, self._agents = extend(self._dones), extend(self._agents)
        self._serial = extend(self._serial)
        self._alloc = new

    def push_many(self, obs, actions, rewards, next_obs, dones, agent_indices) -> None:
        """Append a block of transitions in order (oldest evicted first once full)."""
        obs = np.asarray(obs, dtype=np.float64)
        next_obs = np.asarray(next_obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim or next_obs.shape != obs.shape:
            raise DimensionMismatch(f"expected observations of width {self.obs_dim}")
        actions = np.asarray(actions, dtype=np.int64)
        if np.any((actions < 0) | (actions >= 5)):
            raise ValueError("action index out of range 0..4")
        k = obs.shape[0]
        rewards = np.asarray(rewards, dtype=np.float64)
        dones = np.asarray(dones, dtype=bool)
        agent_indices = np.asarray(agent_indices, dtype=np.int64)
        serial = self.pushes + np.arange(k)
        slots = (self.cursor + np.arange(k)) % self.capacity
        keep = slice(max(0, k - self.capacity), k)  # older rows of an oversized block are evicted at once
        self._grow(min(self.capacity, self.size + k))
        for dst, src in ((self._obs, obs), (self._next_obs, next_obs), (self._actions, actions),
                         (self._rewards, rewards), (self._dones, dones), (self._agents, agent_indices),
                         (self._serial, serial)):
            dst[slots[keep]] = src[keep]
        self.pushes += k
        self.cursor = (self.cursor + k) % self.capacity
        self.size = min(self.size + k, self.capacity)

    def push(self, transition: Transition) -> "ReplayBuffer":
        t = transition
        self.push_many([t.obs], [t.action], [t.reward], [t.next_obs], [t.done], [t.agent_index])
        return self

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        order = np.argsort(self._serial[: self.size], kind="stable")
        return self._gather(order).transitions()

    def serials(self) -> np.ndarray:
        """Push ordinals (0-based) of the stored transitions, oldest first."""
        return np.sort(self._serial[: self.size])

    def _gather(self, idx: np.ndarray) -> TransitionBatch:
        return TransitionBatch(
            obs=self._obs[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_obs=self._next_obs[idx],
            dones=self._dones[idx],
            agent_indices=self._agents[idx],
            slots=idx,
        )

    def sample(self, batch_size: int = BATCH_SIZE, rng: np.random.Generator | None = None) -> TransitionBatch:
        """Uniform draw with replacement from the current contents."""
        if self.size < self.warm_up:
            raise WarmupNotReached(f"buffer holds {self.size} transitions, need {self.warm_up}")
        if rng is None:
            raise ValueError("sample() needs an explicit random generator")
        idx = rng.integers(0, self.size, size=batch_size)
        return self._gather(idx)

    def serial_of(self, slots: np.ndarray) -> np.ndarray:
        return self._serial[slots]
