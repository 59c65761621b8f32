"""Sweep engine and report builder.

A sweep trains one independent run per (L, rho, seed). Each run writes a
run record and a checkpoint under ``<out>/runs/``; a manifest with content
hashes is rewritten atomically after every completed run so an interrupted
sweep can be resumed. Reports are pure functions of the run records.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from . import gridworld as gw
from . import metrics, phase, records
from .errors import InvalidConfig, MissingRuns
from .learner import RngStreams, TrainerConfig, evaluate, run_training
from .neuralnet import NetParams, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

OUT_ENV = "IQLPHASE_OUT"
MANIFEST = "manifest.json"


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "iqlphase-out"))


@dataclass
class SweepConfig:
    L_values: list[int] = field(default_factory=lambda: list(gw.SIDE_LENGTHS))
    rho_values: list[float] = field(default_factory=lambda: list(gw.DENSITIES))
    excluded: list[tuple[int, float]] = field(default_factory=lambda: sorted(gw.EXCLUDED))
    seeds: Union[int, list[int]] = 50
    episodes: int = 1500
    id_enabled: bool = True
    fixed_goal: Optional[tuple[int, int]] = None
    out_dir: Optional[str] = None
    workers: int = 1
    trainer: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.excluded = [(int(L), float(r)) for L, r in self.excluded]
        if self.fixed_goal is not None:
            self.fixed_goal = tuple(self.fixed_goal)
        seeds = self.seed_list
        if len(set(seeds)) != len(seeds):
            raise InvalidConfig(f"duplicate seeds in {seeds}")
        if self.episodes < 1 or self.workers < 1:
            raise InvalidConfig("episodes and workers must be positive")
        for L, rho in self.conditions:
            gw.density_to_count(L, rho)
        self.trainer_config()

    @property
    def seed_list(self) -> list[int]:
        return list(range(self.seeds)) if isinstance(self.seeds, int) else [int(s) for s in self.seeds]

    @property
    def conditions(self) -> list[tuple[int, float]]:
        skip = set(self.excluded)
        return [(L, rho) for L in self.L_values for rho in self.rho_values if (L, rho) not in skip]

    def trainer_config(self) -> TrainerConfig:
        opts = dict(self.trainer)
        opts.setdefault("episodes_max", max(self.episodes, TrainerConfig().episodes_max))
        return TrainerConfig.from_dict(opts)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown sweep options: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: Path) -> "SweepConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def resolved(self) -> dict:
        d = asdict(self)
        d["seeds"] = self.seed_list
        d["excluded"] = [list(p) for p in self.excluded]
        d["trainer"] = self.trainer_config().to_dict()
        d.pop("out_dir")
        d.pop("workers")
        return d


@dataclass(frozen=True)
class RunTask:
    L: int
    rho: float
    seed: int
    episodes: int
    id_enabled: bool
    trainer: dict
    fixed_goal: Optional[tuple[int, int]] = None

    @property
    def condition_dir(self) -> str:
        return f"L{self.L}_rho{self.rho!r}_{'id' if self.id_enabled else 'noid'}"

    @property
    def stem(self) -> str:
        return f"{self.condition_dir}/seed{self.seed:03d}"


def execute_run(task: RunTask) -> tuple[records.RunRecord, "NetParams"]:
    """Train one (condition, seed) and return its record plus trained parameters."""
    env = gw.GridConfig.for_condition(task.L, task.rho, id_enabled=task.id_enabled, fixed_goal=task.fixed_goal)
    cfg = TrainerConfig.from_dict(task.trainer)
    result = run_training(env, cfg, RngStreams.for_run(task.L, task.rho, task.seed), episodes=task.episodes)
    meta = {
        "L": task.L,
        "rho": task.rho,
        "seed": task.seed,
        "id_enabled": task.id_enabled,
        "agent_count": env.agent_count,
        "obs_dim": env.obs_dim,
        "horizon": env.horizon,
        "target_score": env.target_score,
        "fixed_goal": list(task.fixed_goal) if task.fixed_goal else None,
        "episodes_run": len(result.logs),
        "trainer": cfg.to_dict(),
        "updates": result.learner.updates,
        "checkpoint": Path(task.stem).name + ".ckpt",
    }
    record = records.RunRecord(
        meta,
        [records.EpisodeRow.from_log(l) for l in result.logs],
        [records.EvalRow.from_record(e) for e in result.evals],
    )
    return record, result.learner.online


def _write_run(runs_dir: Path, task: RunTask) -> dict[str, str]:
    record, params = execute_run(task)
    rec_path = runs_dir / f"{task.stem}.tsv"
    ckpt_path = runs_dir / f"{task.stem}.ckpt"
    rec_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = ckpt_path.with_name(f".{ckpt_path.name}.tmp{os.getpid()}")
    meta = {"L": task.L, "rho": task.rho, "seed": task.seed, "id_enabled": task.id_enabled}
    save_checkpoint(tmp, params, extra=meta)
    os.replace(tmp, ckpt_path)
    records.save(rec_path, record)
    root = runs_dir.parent
    return {
        str(rec_path.relative_to(root)): records.sha256_file(rec_path),
        str(ckpt_path.relative_to(root)): records.sha256_file(ckpt_path),
    }


def _run_task(args: tuple[str, RunTask]) -> dict[str, str]:
    runs_dir, task = args
    return _write_run(Path(runs_dir), task)


def load_manifest(out: Path) -> dict:
    path = Path(out) / MANIFEST
    if not path.exists():
        return {"files": {}}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _save_manifest(out: Path, files: dict[str, str]) -> None:
    text = json.dumps({"files": dict(sorted(files.items()))}, indent=1, sort_keys=True) + "\n"
    records.write_text_atomic(Path(out) / MANIFEST, text)


def _is_complete(out: Path, task: RunTask, files: dict[str, str]) -> bool:
    for suffix in (".tsv", ".ckpt"):
        rel = f"runs/{task.stem}{suffix}"
        path = out / rel
        if rel not in files or not path.exists() or records.sha256_file(path) != files[rel]:
            return False
    return True


@dataclass
class SweepOutcome:
    out_dir: Path
    completed: list[str]
    skipped: list[str]
    failures: dict[str, str]

    @property
    def ok(self) -> bool:
        return not self.failures


def build_tasks(config: SweepConfig) -> list[RunTask]:
    trainer = config.trainer_config().to_dict()
    return [
        RunTask(L, rho, seed, config.episodes, config.id_enabled, trainer, config.fixed_goal)
        for L, rho in config.conditions
        for seed in config.seed_list
    ]


def run_sweep(config: SweepConfig, out_dir: Optional[Path] = None, workers: Optional[int] = None) -> SweepOutcome:
    """Train every (condition, seed), skipping runs whose files already match the manifest."""
    out = Path(out_dir or config.out_dir or default_out_root())
    workers = workers or config.workers
    out.mkdir(parents=True, exist_ok=True)
    runs_dir = out / "runs"
    records.write_text_atomic(out / "config.json", json.dumps(config.resolved(), indent=1, sort_keys=True) + "\n")

    files = load_manifest(out)["files"]
    tasks = build_tasks(config)
    todo = [t for t in tasks if not _is_complete(out, t, files)]
    skipped = [t.stem for t in tasks if t not in todo]
    if skipped:
        log.info("skipping %d completed runs", len(skipped))
    completed: list[str] = []
    failures: dict[str, str] = {}

    def done(task: RunTask, hashes: dict[str, str]) -> None:
        files.update(hashes)
        _save_manifest(out, files)
        completed.append(task.stem)
        log.info("finished %s (%d/%d)", task.stem, len(completed), len(todo))

    if workers == 1 or len(todo) <= 1:
        for task in todo:
            try:
                done(task, _write_run(runs_dir, task))
            except Exception as exc:  # keep going; report at the end
                failures[task.stem] = repr(exc)
                log.error("run %s failed: %r", task.stem, exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_task, (str(runs_dir), t)): t for t in todo}
            for fut in as_completed(futures):
                task = futures[fut]
                try:
                    done(task, fut.result())
                except Exception as exc:
                    failures[task.stem] = repr(exc)
                    log.error("run %s failed: %r", task.stem, exc)
    _save_manifest(out, files)
    return SweepOutcome(out, sorted(completed), skipped, failures)


def load_runs(runs_dir: Path) -> list[records.RunRecord]:
    runs_dir = Path(runs_dir)
    if not runs_dir.exists():
        raise MissingRuns(f"{runs_dir} does not exist")
    paths = sorted(p for p in runs_dir.rglob("*.tsv") if records.is_run_record(p))
    return [records.load(p) for p in paths]


def _group(runs: Sequence[records.RunRecord]) -> dict[tuple[int, float, bool], list[records.RunRecord]]:
    groups: dict[tuple[int, float, bool], list[records.RunRecord]] = {}
    for r in runs:
        groups.setdefault((*r.condition, r.id_enabled), []).append(r)
    for g in groups.values():
        g.sort(key=lambda r: r.seed)
    return dict(sorted(groups.items()))


def summarize(
    runs: Sequence[records.RunRecord],
    window_frac: float = metrics.WINDOW_FRAC,
    spread_source: str = "eval",
) -> list[metrics.ConditionStats]:
    """ConditionStats per (L, rho) with S/S_grad normalised across the given runs (one ID arm)."""
    stats = [
        metrics.condition_stats(L, rho, rs[0].meta["agent_count"], rs, window_frac, spread_source)
        for (L, rho, _), rs in _group(runs).items()
    ]
    metrics.apply_stability(stats)
    return stats


HEATMAP_METRICS = (("csr", "csr"), ("S", "S"), ("dphase", "d_phase"), ("S_grad", "S_grad"))


def _heatmap_rows(values: dict[tuple[int, float], float]) -> list[dict]:
    """L rows x rho columns over the full experimental grid.

    Excluded cells are left empty; conditions that were not run are ``nan``.
    """
    rows = []
    for L in gw.SIDE_LENGTHS:
        row = {"L": L}
        for rho in gw.DENSITIES:
            key = repr(rho)
            if (L, rho) in gw.EXCLUDED:
                row[key] = None
            else:
                row[key] = values.get((L, rho), math.nan)
        rows.append(row)
    return rows


def build_report(
    runs_dir: Path,
    out_dir: Optional[Path] = None,
    ridge_level: float = phase.RIDGE_LEVEL,
    window_frac: float = metrics.WINDOW_FRAC,
    spread_source: str = "eval",
    conditions: Optional[Sequence[tuple[int, float]]] = None,
) -> dict:
    """Write summary tables, heatmap matrices, ridge crossings and time series."""
    runs_dir = Path(runs_dir)
    runs = load_runs(runs_dir)
    if not runs:
        raise MissingRuns(f"no run records under {runs_dir}")
    out = Path(out_dir) if out_dir else runs_dir.parent / "report"
    out.mkdir(parents=True, exist_ok=True)
    arms = sorted({r.id_enabled for r in runs}, reverse=True)
    if conditions is not None:
        have = {r.condition for r in runs}
        missing = [c for c in conditions if c not in have]
        if missing:
            raise MissingRuns(f"no run records for conditions {missing}")

    summary: dict = {"ridge_level": ridge_level, "window_frac": window_frac, "spread_source": spread_source,
                     "arms": {}}
    for arm in arms:
        arm_runs = [r for r in runs if r.id_enabled == arm]
        arm_name = "id" if arm else "noid"
        arm_out = out if len(arms) == 1 else out / arm_name
        stats = summarize(arm_runs, window_frac, spread_source)
        cond = [(s.L, s.rho, s.csr, s.S) for s in stats]
        try:
            points, tau = phase.build_phase_map(cond, ridge_level)
        except phase.TooFewPoints:
            log.warning("fewer than two conditions with S defined; phase map skipped")
            points, tau = [], (math.nan, math.nan)
        by_cond = {(p.L, p.rho): p for p in points}
        rows = []
        for s in stats:
            row = s.to_row()
            p = by_cond.get((s.L, s.rho))
            row["d_phase"] = p.d_phase if p else math.nan
            row["regime"] = p.regime.value if p else ""
            rows.append(row)
        records.write_table(arm_out / "conditions.tsv", rows)
        d_map = {(p.L, p.rho): p.d_phase for p in points}
        for name, attr in HEATMAP_METRICS:
            vals = {(r["L"], r["rho"]): r[attr] for r in rows}
            records.write_table(arm_out / f"heatmap_{name}.tsv", _heatmap_rows(vals),
                                ["L"] + [repr(r) for r in gw.DENSITIES])
        crossings = phase.ridge_cells(d_map, ridge_level)
        chains = phase.ridge_chains(crossings, sorted({k[0] for k in d_map}), sorted({k[1] for k in d_map}))
        ridge_rows = [
            {"chain": ci, "axis": c.axis, "L_a": c.a[0], "rho_a": c.a[1], "L_b": c.b[0], "rho_b": c.b[1],
             "d_a": c.d_a, "d_b": c.d_b, "fraction": c.fraction}
            for ci, chain in enumerate(chains) for c in chain
        ]
        records.write_table(arm_out / "ridge.tsv", ridge_rows,
                            ["chain", "axis", "L_a", "rho_a", "L_b", "rho_b", "d_a", "d_b", "fraction"])
        for (L, rho, _), rs in _group(arm_runs).items():
            records.write_table(arm_out / "timeseries" / f"L{L}_rho{rho!r}.tsv", metrics.episode_timeseries(rs))
        arm_summary = {
            "tau_csr": tau[0],
            "tau_S": tau[1],
            "v_max": max((s.v for s in stats if not math.isnan(s.v)), default=math.nan),
            "grad_var_max": max((s.grad_var for s in stats if not math.isnan(s.grad_var)), default=math.nan),
            "ridge_chains": len(chains),
            "conditions": rows,
        }
        summary["arms"][arm_name] = arm_summary
        records.write_text_atomic(arm_out / "summary.json", _json(arm_summary | {
            "ridge_level": ridge_level, "window_frac": window_frac, "spread_source": spread_source}))
    return summary


def _json(obj) -> str:
    def clean(o):
        if isinstance(o, float) and math.isnan(o):
            return None
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(obj), indent=1, sort_keys=True) + "\n"


COMPARISON_COLUMNS = ("L", "rho", "arm", "obs_dim", "seeds", "csr", "csr_ci", "v", "v_ci",
                      "grad_norm_mean", "grad_norm_mean_ci", "grad_var", "grad_var_ci")


def run_ablation(config: SweepConfig, out_dir: Optional[Path] = None, workers: Optional[int] = None,
                 window_frac: float = metrics.WINDOW_FRAC) -> tuple[SweepOutcome, SweepOutcome, list[dict]]:
    """Run the sweep with and without agent IDs under shared seeds and tabulate both arms."""
    out = Path(out_dir or config.out_dir or default_out_root())
    outcomes = {}
    stats = {}
    for arm, flag in (("id", True), ("noid", False)):
        arm_cfg = SweepConfig.from_dict({**asdict(config), "id_enabled": flag})
        outcomes[arm] = run_sweep(arm_cfg, out / arm, workers)
        arm_runs = load_runs(out / arm / "runs")
        stats[arm] = {(s.L, s.rho): s for s in summarize(arm_runs, window_frac)}
        stats[arm]["_obs_dim"] = {r.condition: r.meta["obs_dim"] for r in arm_runs}
    rows = []
    for L, rho in config.conditions:
        for arm in ("id", "noid"):
            s = stats[arm].get((L, rho))
            if s is None:
                continue
            row = {k: v for k, v in s.to_row().items() if k in COMPARISON_COLUMNS}
            row.update(arm=arm, obs_dim=stats[arm]["_obs_dim"][(L, rho)])
            rows.append(row)
    records.write_table(out / "comparison.tsv", rows, list(COMPARISON_COLUMNS))
    return outcomes["id"], outcomes["noid"], rows


def train_single(L: int, rho: float, seed: int, episodes: int, id_enabled: bool = True,
                 out_dir: Optional[Path] = None, trainer: Optional[dict] = None) -> Path:
    """One (condition, seed) run written as ``<out>/runs/<condition>/seedNNN.tsv``."""
    cfg = SweepConfig(L_values=[L], rho_values=[rho], seeds=[seed], episodes=episodes,
                      id_enabled=id_enabled, trainer=trainer or {})
    out = run_sweep(cfg, out_dir)
    if out.failures:
        raise RuntimeError(f"training failed: {out.failures}")
    return out.out_dir / "runs" / f"{build_tasks(cfg)[0].stem}.tsv"


def eval_checkpoint(checkpoint: Path, L: int, rho: float, seed: int, episodes: int,
                    id_enabled: Optional[bool] = None) -> records.RunRecord:
    """Greedy evaluation of a saved network; returns a record holding eval rows only."""
    params, header = load_checkpoint(checkpoint)
    if id_enabled is None:
        id_enabled = header.get("meta", {}).get("id_enabled", True)
    env = gw.GridConfig.for_condition(L, rho, id_enabled=id_enabled)
    if env.obs_dim != params.input_dim:
        raise InvalidConfig(f"checkpoint expects {params.input_dim} inputs; condition gives {env.obs_dim}")
    evals = evaluate(params, env, episodes, RngStreams.for_run(L, rho, seed).eval)
    meta = {"L": L, "rho": rho, "seed": seed, "id_enabled": id_enabled, "agent_count": env.agent_count,
            "obs_dim": env.obs_dim, "horizon": env.horizon, "episodes_run": 0,
            "checkpoint": str(checkpoint)}
    return records.RunRecord(meta, [], [records.EvalRow.from_record(e) for e in evals])
