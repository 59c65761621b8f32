"""Run-record files: tab-delimited text with a JSON metadata line and a typed header.

Layout (see docs/FORMATS.md)::

    # iqlphase-run-record 1
    # meta {"L": 8, "rho": 0.03125, ...}
    kind:str<TAB>episode:int<TAB>...
    train<TAB>0<TAB>...
    eval<TAB>9<TAB>...

Floats are written with ``repr`` so values round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .metrics import arrival_spread, co_reach, episode_variance

MAGIC = "# iqlphase-run-record 1"

COLUMNS = (
    ("kind", str),
    ("episode", int),
    ("block", int),
    ("steps", int),
    ("return", float),
    ("done_reason", str),
    ("epsilon", float),
    ("updates", int),
    ("n_td", int),
    ("td_mean", float),
    ("td_var", float),
    ("n_grad", int),
    ("grad_mean", float),
    ("grad_var", float),
    ("spread", float),
    ("co_reach", float),
    ("all_reached", int),
    ("arrivals", str),
)
TYPE_NAMES = {str: "str", int: "int", float: "float"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def format_arrivals(arrivals: Sequence[Optional[int]]) -> str:
    return ";".join("-" if a is None else str(a) for a in arrivals)


def parse_arrivals(text: str) -> list[Optional[int]]:
    if not text:
        return []
    return [None if a == "-" else int(a) for a in text.split(";")]


@dataclass
class EpisodeRow:
    episode: int
    steps: int
    episode_return: float
    done_reason: str
    epsilon: float
    updates: int
    n_td: int
    td_mean: Optional[float]
    td_var: Optional[float]
    n_grad: int
    grad_mean: Optional[float]
    grad_var: Optional[float]
    spread: float
    co_reach: float
    arrivals: list[Optional[int]]

    @classmethod
    def from_log(cls, log) -> "EpisodeRow":
        td, gn = log.td_error_samples, log.grad_norm_samples
        return cls(
            episode=log.episode_index,
            steps=log.steps,
            episode_return=float(log.episode_return),
            done_reason=log.done_reason,
            epsilon=float(log.epsilon),
            updates=log.updates,
            n_td=int(td.size),
            td_mean=float(td.mean()) if td.size else None,
            td_var=episode_variance(td),
            n_grad=int(gn.size),
            grad_mean=float(gn.mean()) if gn.size else None,
            grad_var=episode_variance(gn),
            spread=arrival_spread(log.arrival_steps, log.horizon),
            co_reach=co_reach(log.arrival_steps),
            arrivals=list(log.arrival_steps),
        )

    @property
    def all_reached(self) -> bool:
        return all(a is not None for a in self.arrivals)


@dataclass
class EvalRow:
    episode: int
    block: int
    steps: int
    arrivals: list[Optional[int]]
    horizon: int

    @classmethod
    def from_record(cls, rec) -> "EvalRow":
        return cls(rec.episode_index, rec.block_index, rec.steps, list(rec.arrival_steps), rec.horizon)

    @property
    def all_reached(self) -> bool:
        return all(a is not None for a in self.arrivals)

    @property
    def spread(self) -> float:
        return arrival_spread(self.arrivals, self.horizon)

    @property
    def co_reach(self) -> float:
        return co_reach(self.arrivals)


@dataclass
class RunRecord:
    meta: dict
    episodes: list[EpisodeRow] = field(default_factory=list)
    evals: list[EvalRow] = field(default_factory=list)

    @property
    def episodes_run(self) -> int:
        return int(self.meta.get("episodes_run", len(self.episodes)))

    @property
    def condition(self) -> tuple[int, float]:
        return int(self.meta["L"]), float(self.meta["rho"])

    @property
    def id_enabled(self) -> bool:
        return bool(self.meta.get("id_enabled", True))

    @property
    def seed(self) -> int:
        return int(self.meta["seed"])


def _episode_cells(row: EpisodeRow) -> dict:
    return {
        "kind": "train", "episode": row.episode, "block": None, "steps": row.steps,
        "return": row.episode_return, "done_reason": row.done_reason, "epsilon": row.epsilon,
        "updates": row.updates, "n_td": row.n_td, "td_mean": row.td_mean, "td_var": row.td_var,
        "n_grad": row.n_grad, "grad_mean": row.grad_mean, "grad_var": row.grad_var,
        "spread": row.spread, "co_reach": row.co_reach, "all_reached": row.all_reached,
        "arrivals": format_arrivals(row.arrivals),
    }


def _eval_cells(row: EvalRow) -> dict:
    return {
        "kind": "eval", "episode": row.episode, "block": row.block, "steps": row.steps,
        "spread": row.spread, "co_reach": row.co_reach, "all_reached": row.all_reached,
        "arrivals": format_arrivals(row.arrivals),
    }


def dumps(record: RunRecord) -> str:
    lines = [MAGIC, "# meta " + json.dumps(record.meta, sort_keys=True)]
    lines.append("\t".join(f"{name}:{TYPE_NAMES[t]}" for name, t in COLUMNS))
    for cells in [_episode_cells(r) for r in record.episodes] + [_eval_cells(r) for r in record.evals]:
        lines.append("\t".join(_fmt(cells.get(name)) for name, _ in COLUMNS))
    return "\n".join(lines) + "\n"


def _parse(value: str, typ):
    if value == "":
        return None
    if typ is float:
        return float(value)
    if typ is int:
        return int(value)
    return value


def loads(text: str) -> RunRecord:
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError("not an iqlphase run record")
    if not lines[1].startswith("# meta "):
        raise ValueError("missing metadata line")
    meta = json.loads(lines[1][len("# meta "):])
    header = [h.split(":") for h in lines[2].split("\t")]
    types = {"str": str, "int": int, "float": float}
    names = [h[0] for h in header]
    parsers = [types[h[1]] for h in header]
    record = RunRecord(meta)
    horizon = int(meta["horizon"])
    for line in lines[3:]:
        if not line:
            continue
        cells = {n: _parse(v, t) for n, t, v in zip(names, parsers, line.split("\t"))}
        arrivals = parse_arrivals(cells["arrivals"] or "")
        if cells["kind"] == "train":
            record.episodes.append(EpisodeRow(
                episode=cells["episode"], steps=cells["steps"], episode_return=cells["return"],
                done_reason=cells["done_reason"], epsilon=cells["epsilon"], updates=cells["updates"],
                n_td=cells["n_td"], td_mean=cells["td_mean"], td_var=cells["td_var"],
                n_grad=cells["n_grad"], grad_mean=cells["grad_mean"], grad_var=cells["grad_var"],
                spread=cells["spread"], co_reach=cells["co_reach"], arrivals=arrivals,
            ))
        elif cells["kind"] == "eval":
            record.evals.append(EvalRow(cells["episode"], cells["block"], cells["steps"], arrivals, horizon))
        else:
            raise ValueError(f"unknown row kind {cells['kind']!r}")
    return record


def is_run_record(path: Path) -> bool:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.readline().rstrip("\n") == MAGIC
    except (OSError, UnicodeDecodeError):
        return False


def write_text_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save(path: Path, record: RunRecord) -> None:
    write_text_atomic(path, dumps(record))


def load(path: Path) -> RunRecord:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_table(path: Path, rows: Iterable[dict], columns: Optional[Sequence[str]] = None) -> None:
    """Tab-delimited table with a plain header line."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    out = ["\t".join(columns)]
    for row in rows:
        out.append("\t".join(_fmt(row.get(c)) for c in columns))
    write_text_atomic(path, "\n".join(out) + "\n")


def read_table(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    cols = lines[0].split("\t")
    return [dict(zip(cols, line.split("\t"))) for line in lines[1:] if line]
