"""Dense Q-network in float64 numpy with hand-written backprop.

Architecture: input -> FC(128, ReLU) -> FC(128, ReLU) -> FC(5). Weight
matrices are stored as ``[fan_in x fan_out]`` so a batch forward pass is
``X @ W + b``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import DimensionMismatch, NonFiniteGradient

HIDDEN = 128
N_OUTPUTS = 5
TENSOR_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

CHECKPOINT_MAGIC = b"IQLNET1\n"


@dataclass
class NetParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.tensors())

    def copy(self) -> "NetParams":
        return NetParams(*(t.copy() for t in self.tensors()))

    def zeros_like(self) -> "NetParams":
        return NetParams(*(np.zeros_like(t) for t in self.tensors()))

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors())


# Gradients share the parameter layout.
GradientSet = NetParams


def init_params(
    input_dim: int,
    rng: np.random.Generator,
    hidden: int = HIDDEN,
    n_outputs: int = N_OUTPUTS,
) -> NetParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""

    def dense(fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)

    w1, b1 = dense(input_dim, hidden)
    w2, b2 = dense(hidden, hidden)
    w3, b3 = dense(hidden, n_outputs)
    return NetParams(w1, b1, w2, b2, w3, b3)


def _check_input(params: NetParams, obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != params.input_dim:
        raise DimensionMismatch(f"observation has {obs.shape[-1]} features, network expects {params.input_dim}")
    return obs


def forward(params: NetParams, obs: np.ndarray) -> np.ndarray:
    """Q-values for one observation (shape [d]) or a batch (shape [B, d])."""
    obs = _check_input(params, obs)
    h1 = np.maximum(obs @ params.w1 + params.b1, 0.0)
    h2 = np.maximum(h1 @ params.w2 + params.b2, 0.0)
    return h2 @ params.w3 + params.b3


def huber(residual):
    """Smooth-L1 loss with transition point 1."""
    a = np.abs(residual)
    out = np.where(a <= 1.0, 0.5 * a * a, a - 0.5)
    return float(out) if np.ndim(out) == 0 else out


def huber_grad(residual):
    return np.clip(residual, -1.0, 1.0)


def loss_and_grads(
    params: NetParams, obs: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> tuple[float, GradientSet, np.ndarray]:
    """Mean Huber loss on the taken-action outputs, its gradient, and the TD errors y - Q(s, a).

    Targets are constants: no gradient flows through them.
    """
    obs = _check_input(params, obs)
    if obs.ndim != 2:
        raise DimensionMismatch("expected a 2-D batch of observations")
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    B = obs.shape[0]
    if B == 0 or actions.shape != (B,) or targets.shape != (B,):
        raise DimensionMismatch(f"batch of {B} observations with {actions.shape} actions, {targets.shape} targets")

    z1 = obs @ params.w1 + params.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.w2 + params.b2
    h2 = np.maximum(z2, 0.0)
    q = h2 @ params.w3 + params.b3

    rows = np.arange(B)
    residual = q[rows, actions] - targets
    loss = float(np.mean(huber(residual)))

    dq = np.zeros_like(q)
    dq[rows, actions] = huber_grad(residual) / B
    gw3 = h2.T @ dq
    gb3 = dq.sum(axis=0)
    dz2 = (dq @ params.w3.T) * (z2 > 0)
    gw2 = h1.T @ dz2
    gb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ params.w2.T) * (z1 > 0)
    gw1 = obs.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, NetParams(gw1, gb1, gw2, gb2, gw3, gb3), -residual


def backward(
    params: NetParams, obs: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> tuple[float, GradientSet]:
    """Mean Huber loss over the batch and its (unclipped) parameter gradient."""
    loss, grads, _ = loss_and_grads(params, obs, actions, targets)
    return loss, grads


def global_norm(grads: GradientSet) -> float:
    return math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads))


def clip_gradients(grads: GradientSet, max_norm: float = 1.0) -> tuple[GradientSet, float]:
    """Rescale so the global L2 norm is at most ``max_norm``.

    Returns the (possibly rescaled) gradients and the pre-clip norm. The
    scale factor is nudged down by ulps if rounding would leave the result
    marginally above ``max_norm``, which also makes clipping idempotent.
    """
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    while True:
        clipped = NetParams(*(g * scale for g in grads))
        if global_norm(clipped) <= max_norm:
            return clipped, norm
        scale = np.nextafter(scale, 0.0)


@dataclass
class AdamState:
    m: NetParams
    v: NetParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: NetParams, **kwargs) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like(), **kwargs)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def adam_step(
    params: NetParams, state: AdamState, grads: GradientSet, lr: float = 1.5e-4
) -> tuple[NetParams, AdamState]:
    """One bias-corrected Adam update, applied in place; returns (params, state)."""
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteGradient("gradient contains NaN or Inf")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, m, v, g in zip(params, state.m, state.v, grads):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def polyak_update(target: NetParams, online: NetParams, tau: float = 1e-3) -> NetParams:
    """target <- (1 - tau) * target + tau * online, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    for t, o in zip(target, online):
        if t.shape != o.shape:
            raise DimensionMismatch(f"shape mismatch {t.shape} vs {o.shape}")
        if tau == 1.0:
            t[...] = o
        else:
            t *= 1.0 - tau
            t += tau * o
    return target


def params_checksum(*objs) -> str:
    """SHA-256 over the raw bytes of the given NetParams/AdamState objects."""
    import hashlib

    h = hashlib.sha256()
    for obj in objs:
        if isinstance(obj, AdamState):
            h.update(str(obj.t).encode())
            tensors = list(obj.m) + list(obj.v)
        else:
            tensors = list(obj)
        for t in tensors:
            h.update(np.ascontiguousarray(t).tobytes())
    return h.hexdigest()


def save_checkpoint(path: Path, params: NetParams, extra: Optional[dict] = None) -> None:
    """Write the checkpoint layout documented in docs/FORMATS.md."""
    header = {
        "input_dim": params.input_dim,
        "dtype": "<f8",
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in zip(TENSOR_NAMES, params)],
    }
    if extra:
        header["meta"] = extra
    blob = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in params)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def load_checkpoint(path: Path) -> tuple[NetParams, dict]:
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a Q-network checkpoint")
        header = json.loads(fh.readline())
        blob = fh.read()
    tensors, offset = [], 0
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(spec["shape"])
        tensors.append(arr.astype(np.float64))
        offset += 8 * count
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    params = NetParams(*tensors)
    if params.input_dim != header["input_dim"]:
        raise ValueError(f"{path}: header input_dim {header['input_dim']} != w1 rows {params.input_dim}")
    return params, header
