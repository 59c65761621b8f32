"""Condition-level statistics computed from per-episode traces.

Everything here is a pure function of logged values. Variances and standard
deviations use the population convention (ddof=0); confidence intervals use
the normal approximation over per-seed means.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DegenerateNormalizer, EmptyWindow

WINDOW_FRAC = 0.25
Z95 = 1.959963984540054


def window_size(episodes_run: int, frac: float = WINDOW_FRAC) -> int:
    """Number of trailing episodes used for condition statistics: ceil(frac * n)."""
    if episodes_run < 1:
        raise EmptyWindow("no episodes were run")
    if not 0.0 < frac <= 1.0:
        raise ValueError(f"window fraction must lie in (0, 1], got {frac}")
    # round() guards against 0.25 * n landing a hair above an integer
    return max(1, math.ceil(round(frac * episodes_run, 9)))


def window_start(episodes_run: int, frac: float = WINDOW_FRAC) -> int:
    return episodes_run - window_size(episodes_run, frac)


def csr(records: Iterable) -> float:
    """Fraction of evaluation episodes in which every agent reached the goal."""
    flags = [r if isinstance(r, (bool, np.bool_)) else r.all_reached for r in records]
    if not flags:
        raise EmptyWindow("no evaluation episodes in the aggregation window")
    return sum(bool(f) for f in flags) / len(flags)


def episode_variance(samples: Sequence[float]) -> Optional[float]:
    """Population variance of one episode's samples, or None with fewer than two."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        return None
    return float(np.var(x))


def mean_episode_variance(variances: Iterable[Optional[float]]) -> float:
    vals = [v for v in variances if v is not None and not math.isnan(v)]
    if not vals:
        raise EmptyWindow("no episode in the window has at least two samples")
    return float(np.mean(vals))


def td_variance(episodes: Iterable) -> float:
    """Mean over episodes of the per-episode TD-error variance.

    Accepts episode logs (``td_error_samples``) or raw sample arrays.
    """
    return mean_episode_variance(
        episode_variance(getattr(e, "td_error_samples", e)) for e in episodes
    )


def grad_norm_variance(episodes: Iterable) -> float:
    return mean_episode_variance(
        episode_variance(getattr(e, "grad_norm_samples", e)) for e in episodes
    )


def stability_index(v: float, v_max: float) -> float:
    """S = 1 - v / v_max."""
    if v_max <= 0.0:
        raise DegenerateNormalizer("maximum variance is zero; stability index undefined")
    if v < 0.0 or v > v_max * (1.0 + 1e-12):
        raise ValueError(f"variance {v} outside [0, v_max={v_max}]")
    return min(1.0, max(0.0, 1.0 - v / v_max))


grad_stability_index = stability_index


def arrival_spread(arrival_steps: Sequence[Optional[int]], horizon: int) -> float:
    """Population std of arrival steps, unreached agents counted at the horizon."""
    if len(arrival_steps) == 0:
        raise ValueError("need at least one agent")
    t = np.array([horizon if a is None else a for a in arrival_steps], dtype=np.float64)
    return float(np.std(t))


def co_reach(arrival_steps: Sequence[Optional[int]]) -> float:
    if len(arrival_steps) == 0:
        raise ValueError("need at least one agent")
    return sum(a is not None for a in arrival_steps) / len(arrival_steps)


def rho_eff(rho: float, csr_value: float) -> float:
    return rho * csr_value


def mean_ci(values: Sequence[float]) -> tuple[float, float]:
    """Mean and 95% normal-approximation half-width (0 for a single value)."""
    x = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    if x.size == 0:
        return math.nan, math.nan
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(Z95 * x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class ConditionStats:
    L: int
    rho: float
    agent_count: int
    seeds: int
    episodes_run: int
    window_start: int
    window_episodes: int  # total (episode, seed) rows inside the window
    k_eval: int
    csr: float
    csr_ci: float
    v: float
    v_ci: float
    grad_var: float
    grad_var_ci: float
    grad_norm_mean: float
    grad_norm_mean_ci: float
    spread_mean: float
    co_reach_mean: float
    rho_eff: float
    S: float = math.nan
    S_grad: float = math.nan
    spread_source: str = "eval"
    window_episode_indices: list[int] = field(default_factory=list, repr=False)

    def to_row(self) -> dict:
        row = asdict(self)
        row.pop("window_episode_indices")
        return row


def _window_mean(rows, attr, per_seed):
    vals = [getattr(r, attr) for r in rows]
    vals = [v for v in vals if v is not None and not math.isnan(v)]
    per_seed.append(float(np.mean(vals)) if vals else math.nan)
    return vals


def condition_stats(
    L: int,
    rho: float,
    agent_count: int,
    runs: Sequence,
    window_frac: float = WINDOW_FRAC,
    spread_source: str = "eval",
) -> ConditionStats:
    """Aggregate one (L, rho) condition over its seeds.

    Each run must expose ``episodes_run``, ``episodes`` (rows carrying
    ``episode``, ``td_var``, ``grad_var``, ``grad_mean``, ``spread``,
    ``co_reach``) and ``evals`` (rows carrying ``episode``, ``all_reached``,
    ``spread``, ``co_reach``). S and S_grad are filled in across conditions
    by :func:`apply_stability`.
    """
    if not runs:
        raise EmptyWindow(f"no runs for condition (L={L}, rho={rho})")
    if spread_source not in ("eval", "train"):
        raise ValueError("spread_source must be 'eval' or 'train'")
    episodes_run = {r.episodes_run for r in runs}
    if len(episodes_run) != 1:
        raise ValueError(f"runs disagree on episode count: {sorted(episodes_run)}")
    n_ep = episodes_run.pop()
    start = window_start(n_ep, window_frac)

    td_vars, grad_vars, grad_means, spreads, reaches, flags = [], [], [], [], [], []
    seed_csr, seed_v, seed_gv, seed_gm = [], [], [], []
    window_rows, used = 0, set()
    for run in runs:
        ep_rows = [e for e in run.episodes if e.episode >= start]
        ev_rows = [e for e in run.evals if e.episode >= start]
        window_rows += len(ep_rows)
        used.update(e.episode for e in ep_rows)
        td_vars += _window_mean(ep_rows, "td_var", seed_v)
        grad_vars += _window_mean(ep_rows, "grad_var", seed_gv)
        grad_means += _window_mean(ep_rows, "grad_mean", seed_gm)
        f = [e.all_reached for e in ev_rows]
        flags += f
        seed_csr.append(float(np.mean(f)) if f else math.nan)
        src = ev_rows if spread_source == "eval" else ep_rows
        spreads += [e.spread for e in src]
        reaches += [e.co_reach for e in src]

    csr_value = csr(flags)
    v = _or_nan(mean_episode_variance, td_vars)
    gv = _or_nan(mean_episode_variance, grad_vars)
    return ConditionStats(
        L=L,
        rho=rho,
        agent_count=agent_count,
        seeds=len(runs),
        episodes_run=n_ep,
        window_start=start,
        window_episodes=window_rows,
        k_eval=len(flags),
        csr=csr_value,
        csr_ci=mean_ci(seed_csr)[1],
        v=v,
        v_ci=mean_ci(seed_v)[1],
        grad_var=gv,
        grad_var_ci=mean_ci(seed_gv)[1],
        grad_norm_mean=float(np.mean(grad_means)) if grad_means else math.nan,
        grad_norm_mean_ci=mean_ci(seed_gm)[1],
        spread_mean=float(np.mean(spreads)) if spreads else math.nan,
        co_reach_mean=float(np.mean(reaches)) if reaches else math.nan,
        rho_eff=rho_eff(rho, csr_value),
        spread_source=spread_source,
        window_episode_indices=sorted(used),
    )


def _or_nan(fn, *args) -> float:
    # conditions that never left warm-up have no TD samples in the window
    try:
        return fn(*args)
    except EmptyWindow:
        return math.nan


def apply_stability(stats: Sequence[ConditionStats]) -> Sequence[ConditionStats]:
    """Fill S and S_grad, normalising by the sweep-wide maxima of v and grad_var.

    Conditions without variance data keep NaN. Raises DegenerateNormalizer
    when every available variance is zero.
    """
    for attr, out, index in (("v", "S", stability_index), ("grad_var", "S_grad", grad_stability_index)):
        vals = [getattr(s, attr) for s in stats if not math.isnan(getattr(s, attr))]
        if not vals:
            continue
        top = max(vals)
        for s in stats:
            x = getattr(s, attr)
            setattr(s, out, math.nan if math.isnan(x) else index(x, top))
    return stats


TIMESERIES_FIELDS = ("return", "td_mean", "td_var", "grad_mean", "grad_var", "spread", "co_reach")


def episode_timeseries(runs: Sequence) -> list[dict]:
    """Per-episode mean and 95% CI across seeds of each logged quantity."""
    by_episode: dict[int, list] = {}
    for run in runs:
        for row in run.episodes:
            by_episode.setdefault(row.episode, []).append(row)
    out = []
    for ep in sorted(by_episode):
        rows = by_episode[ep]
        rec = {"episode": ep, "seeds": len(rows)}
        for name in TIMESERIES_FIELDS:
            attr = "episode_return" if name == "return" else name
            m, ci = mean_ci([getattr(r, attr) for r in rows])
            rec[f"{name}_mean"] = m
            rec[f"{name}_ci95"] = ci
        out.append(rec)
    return out
