"""Parameter-shared Double DQN trainer.

All agents act from one online network. Each environment step pushes one
transition per still-active agent into the shared buffer and, once the
buffer is warm, runs ``updates_per_env_step`` gradient updates.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from . import gridworld as gw
from .metrics import arrival_spread, co_reach
from .neuralnet import (
    AdamState,
    NetParams,
    adam_step,
    clip_gradients,
    forward,
    init_params,
    loss_and_grads,
    polyak_update,
)
from .replay import ReplayBuffer, Transition, TransitionBatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    episodes_max: int = 1500
    lr: float = 1.5e-4
    gamma: float = 0.95
    tau: float = 1e-3
    eps_start: float = 1.0
    eps_min: float = 0.01
    eps_decay: float = 0.98
    batch_size: int = 64
    warm_up: int = 1500
    buffer_capacity: int = 100_000
    max_grad_norm: float = 1.0
    hidden: int = 128
    eval_every: int = 10
    eval_episodes: int = 5
    updates_per_env_step: int = 1

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive, got {getattr(self, f.name)}")
        if self.eps_min > self.eps_start or self.eps_start > 1.0:
            raise ValueError("need 0 < eps_min <= eps_start <= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown trainer options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RngStreams:
    """Independent generators so that interleaving never changes results."""

    env: np.random.Generator
    action: np.random.Generator
    replay: np.random.Generator
    eval: np.random.Generator
    init: np.random.Generator

    @classmethod
    def for_run(cls, L: int, rho: float, seed: int) -> "RngStreams":
        """Streams keyed on (condition, seed) only; the ID flag is not part of the key."""
        frac = Fraction(rho)
        ss = np.random.SeedSequence([int(seed), int(L), frac.numerator, frac.denominator])
        return cls(*(np.random.default_rng(child) for child in ss.spawn(5)))

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        return cls(*(np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(5)))


@dataclass
class Learner:
    online: NetParams
    target: NetParams
    adam: AdamState
    buffer: ReplayBuffer
    updates: int = 0

    @classmethod
    def create(cls, obs_dim: int, cfg: TrainerConfig, rng: np.random.Generator) -> "Learner":
        online = init_params(obs_dim, rng, hidden=cfg.hidden)
        return cls(
            online=online,
            target=online.copy(),
            adam=AdamState.zeros(online),
            buffer=ReplayBuffer(obs_dim, capacity=cfg.buffer_capacity, warm_up=cfg.warm_up),
        )


@dataclass
class EpisodeLog:
    episode_index: int
    td_error_samples: np.ndarray
    grad_norm_samples: np.ndarray
    arrival_steps: list[Optional[int]]
    episode_return: float
    done_reason: str
    steps: int
    horizon: int
    epsilon: float
    updates: int = 0

    @property
    def co_reach(self) -> float:
        return co_reach(self.arrival_steps)

    @property
    def spread(self) -> float:
        return arrival_spread(self.arrival_steps, self.horizon)


@dataclass
class EvalRecord:
    episode_index: int
    block_index: int
    arrival_steps: list[Optional[int]]
    horizon: int
    steps: int

    @property
    def all_reached(self) -> bool:
        return all(a is not None for a in self.arrival_steps)

    @property
    def co_reach(self) -> float:
        return co_reach(self.arrival_steps)

    @property
    def spread(self) -> float:
        return arrival_spread(self.arrival_steps, self.horizon)


def epsilon(episode_index: int, cfg: TrainerConfig) -> float:
    """max(eps_min, eps_start * decay**episode)."""
    if episode_index < 0:
        raise ValueError("episode_index must be non-negative")
    return max(cfg.eps_min, cfg.eps_start * cfg.eps_decay**episode_index)


def select_actions(q_values: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Row-wise epsilon-greedy; greedy ties go to the lowest action index.

    With ``eps == 0`` no random numbers are consumed.
    """
    q_values = np.atleast_2d(q_values)
    greedy = np.argmax(q_values, axis=1)
    if eps <= 0.0:
        return greedy
    explore = rng.random(len(q_values)) < eps
    random_actions = rng.integers(0, q_values.shape[1], size=len(q_values))
    return np.where(explore, random_actions, greedy)


def select_action(q_values: Sequence[float], eps: float, rng: Optional[np.random.Generator] = None) -> int:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {eps}")
    if eps > 0.0 and rng is None:
        raise ValueError("a random generator is required when eps > 0")
    return int(select_actions(np.asarray(q_values, dtype=np.float64), eps, rng)[0])


def _as_batch(batch) -> TransitionBatch:
    if isinstance(batch, TransitionBatch):
        return batch
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    t: Transition
    return TransitionBatch(
        obs=np.stack([t.obs for t in batch]),
        actions=np.array([t.action for t in batch], dtype=np.int64),
        rewards=np.array([t.reward for t in batch], dtype=np.float64),
        next_obs=np.stack([t.next_obs for t in batch]),
        dones=np.array([t.done for t in batch], dtype=bool),
        agent_indices=np.array([t.agent_index for t in batch], dtype=np.int64),
        slots=np.arange(len(batch)),
    )


def compute_targets(batch, online: NetParams, target: NetParams, gamma: float) -> np.ndarray:
    """y = r + gamma * (1 - d) * Q_target(s', argmax_a Q_online(s', a))."""
    b = _as_batch(batch)
    next_actions = np.argmax(forward(online, b.next_obs), axis=1)
    next_values = forward(target, b.next_obs)[np.arange(len(b)), next_actions]
    return b.rewards + gamma * (1.0 - b.dones.astype(np.float64)) * next_values


def update(learner: Learner, cfg: TrainerConfig, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One gradient step. Returns the per-sample TD errors and the pre-clip gradient norm."""
    batch = learner.buffer.sample(cfg.batch_size, rng)
    y = compute_targets(batch, learner.online, learner.target, cfg.gamma)
    _, grads, td = loss_and_grads(learner.online, batch.obs, batch.actions, y)
    grads, norm = clip_gradients(grads, cfg.max_grad_norm)
    adam_step(learner.online, learner.adam, grads, cfg.lr)
    polyak_update(learner.target, learner.online, cfg.tau)
    learner.updates += 1
    return td, norm


def train_episode(
    env_config: gw.GridConfig,
    learner: Learner,
    cfg: TrainerConfig,
    rngs: RngStreams,
    episode_index: int,
    snapshot_hook: Optional[Callable[[NetParams], None]] = None,
) -> EpisodeLog:
    """Run one training episode and return its trace."""
    eps = epsilon(episode_index, cfg)
    state = gw.reset(env_config, rngs.env)
    N = env_config.agent_count
    td_chunks: list[np.ndarray] = []
    norms: list[float] = []
    updates = 0
    while not state.done:
        active = state.active
        joint = np.zeros(N, dtype=np.int64)
        if active.size:
            obs = gw.observe_many(state, active)
            # every agent acts from the same parameter snapshot taken at step start
            if snapshot_hook is not None:
                snapshot_hook(learner.online)
            actions = select_actions(forward(learner.online, obs), eps, rngs.action)
            joint[active] = actions
        nxt, rewards, done, reason = gw.step(state, joint, rngs.env)
        if active.size:
            next_obs = gw.observe_many(nxt, active)
            terminal = nxt.reached[active] | (done and reason == gw.TARGET_REACHED)
            learner.buffer.push_many(obs, actions, rewards[active], next_obs, terminal, active)
        state = nxt
        if learner.buffer.ready:
            for _ in range(cfg.updates_per_env_step):
                td, norm = update(learner, cfg, rngs.replay)
                td_chunks.append(td)
                norms.append(norm)
                updates += 1
    return EpisodeLog(
        episode_index=episode_index,
        td_error_samples=np.concatenate(td_chunks) if td_chunks else np.empty(0),
        grad_norm_samples=np.asarray(norms, dtype=np.float64),
        arrival_steps=list(state.arrival_step),
        episode_return=state.accumulated_reward,
        done_reason=state.done_reason,
        steps=state.step_count,
        horizon=env_config.horizon,
        epsilon=eps,
        updates=updates,
    )


def evaluate(
    params: NetParams,
    env_config: gw.GridConfig,
    episodes: int,
    rng: np.random.Generator,
    episode_index: int = -1,
) -> list[EvalRecord]:
    """Greedy rollouts: no learning, no buffer writes."""
    records = []
    for k in range(episodes):
        state = gw.reset(env_config, rng)
        joint = np.zeros(env_config.agent_count, dtype=np.int64)
        while not state.done:
            active = state.active
            joint[:] = 0
            if active.size:
                joint[active] = np.argmax(forward(params, gw.observe_many(state, active)), axis=1)
            state, _, _, _ = gw.step(state, joint, rng)
        records.append(EvalRecord(episode_index, k, list(state.arrival_step), env_config.horizon, state.step_count))
    return records


@dataclass
class TrainingResult:
    env_config: gw.GridConfig
    cfg: TrainerConfig
    learner: Learner
    logs: list[EpisodeLog] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)


def run_training(
    env_config: gw.GridConfig,
    cfg: TrainerConfig,
    rngs: RngStreams,
    episodes: Optional[int] = None,
    progress: Optional[Callable[[EpisodeLog], None]] = None,
) -> TrainingResult:
    """Train for ``episodes`` (default ``cfg.episodes_max``) with periodic greedy evaluation."""
    episodes = cfg.episodes_max if episodes is None else episodes
    if episodes > cfg.episodes_max:
        raise ValueError(f"episodes={episodes} exceeds episodes_max={cfg.episodes_max}")
    learner = Learner.create(env_config.obs_dim, cfg, rngs.init)
    result = TrainingResult(env_config, cfg, learner)
    for ep in range(episodes):
        ep_log = train_episode(env_config, learner, cfg, rngs, ep)
        result.logs.append(ep_log)
        if (ep + 1) % cfg.eval_every == 0:
            result.evals.extend(evaluate(learner.online, env_config, cfg.eval_episodes, rngs.eval, ep))
        if progress is not None:
            progress(ep_log)
    return result
