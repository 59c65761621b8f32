"""Command-line entry point: ``iqlphase {sweep,train,eval,report,ablate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gridworld as gw
from . import metrics, orchestrator, phase, records
from .errors import IQLPhaseError


def _rho(text: str) -> float:
    value = float(text)
    if value not in gw.DENSITIES:
        raise argparse.ArgumentTypeError(
            f"unsupported density {text}; choose one of {', '.join(repr(r) for r in gw.DENSITIES)}"
        )
    return value


def _side(text: str) -> int:
    value = int(text)
    if value not in gw.SIDE_LENGTHS:
        raise argparse.ArgumentTypeError(f"unsupported side length {text}; choose one of {gw.SIDE_LENGTHS}")
    return value


def _sweep_config(args) -> orchestrator.SweepConfig:
    cfg = orchestrator.SweepConfig.load(args.config)
    overrides = {}
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if getattr(args, "no_id", False):
        overrides["id_enabled"] = False
    if overrides:
        cfg = orchestrator.SweepConfig.from_dict({**cfg.__dict__, **overrides})
    return cfg


def _out(args, config=None) -> Path:
    if args.out:
        return Path(args.out)
    if config is not None and config.out_dir:
        return Path(config.out_dir)
    return orchestrator.default_out_root()


def cmd_sweep(args) -> int:
    cfg = _sweep_config(args)
    outcome = orchestrator.run_sweep(cfg, _out(args, cfg), args.workers)
    print(f"{len(outcome.completed)} runs completed, {len(outcome.skipped)} skipped -> {outcome.out_dir}")
    if outcome.failures:
        for stem, err in sorted(outcome.failures.items()):
            print(f"FAILED {stem}: {err}", file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args) -> int:
    cfg = _sweep_config(args)
    id_out, noid_out, rows = orchestrator.run_ablation(cfg, _out(args, cfg), args.workers, args.window_frac)
    print(f"comparison table: {Path(_out(args, cfg)) / 'comparison.tsv'} ({len(rows)} rows)")
    failures = {**id_out.failures, **noid_out.failures}
    for stem, err in sorted(failures.items()):
        print(f"FAILED {stem}: {err}", file=sys.stderr)
    return 1 if failures else 0


def cmd_train(args) -> int:
    trainer = {}
    if args.config:
        trainer = orchestrator.SweepConfig.load(args.config).trainer
    path = orchestrator.train_single(args.L, args.rho, args.seed, args.episodes, not args.no_id,
                                     _out(args), trainer)
    print(path)
    return 0


def cmd_eval(args) -> int:
    record = orchestrator.eval_checkpoint(Path(args.checkpoint), args.L, args.rho, args.seed, args.episodes,
                                          False if args.no_id else None)
    text = records.dumps(record)
    if args.out:
        records.write_text_atomic(Path(args.out), text)
        print(f"CSR {metrics.csr(record.evals):.4f} over {len(record.evals)} episodes -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if (runs / "runs").is_dir():
        runs = runs / "runs"
    summary = orchestrator.build_report(runs, args.out, args.ridge_level, args.window_frac, args.spread_source)
    for arm, s in summary["arms"].items():
        print(f"[{arm}] {len(s['conditions'])} conditions, tau_CSR={s['tau_csr']:.4f} "
              f"tau_S={s['tau_S']:.4f}, ridge chains={s['ridge_chains']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iqlphase", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common_sweep(sp):
        sp.add_argument("--config", required=True, type=Path, help="JSON sweep config")
        sp.add_argument("--out", help=f"output directory (default ${orchestrator.OUT_ENV} or ./iqlphase-out)")
        sp.add_argument("--workers", type=int, default=None, help="parallel worker processes")
        sp.add_argument("--episodes", type=int, default=None, help="override episodes per run")

    sp = sub.add_parser("sweep", help="train every (L, rho, seed) of a config")
    common_sweep(sp)
    sp.add_argument("--no-id", action="store_true", help="drop the one-hot agent id from observations")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("ablate", help="run a sweep with and without agent ids and compare")
    common_sweep(sp)
    sp.add_argument("--window-frac", type=float, default=metrics.WINDOW_FRAC)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("train", help="train a single condition")
    sp.add_argument("--L", type=_side, required=True)
    sp.add_argument("--rho", type=_rho, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--episodes", type=int, default=1500)
    sp.add_argument("--no-id", action="store_true")
    sp.add_argument("--config", type=Path, help="take trainer options from this sweep config")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--L", type=_side, required=True)
    sp.add_argument("--rho", type=_rho, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--episodes", type=int, default=20, help="number of greedy episodes")
    sp.add_argument("--no-id", action="store_true")
    sp.add_argument("--out", help="write the eval record here instead of stdout")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="summaries, heatmaps and ridge crossings from run records")
    sp.add_argument("runs", help="sweep output directory or its runs/ subdirectory")
    sp.add_argument("--out", help="report directory (default <sweep>/report)")
    sp.add_argument("--ridge-level", type=float, default=phase.RIDGE_LEVEL)
    sp.add_argument("--window-frac", type=float, default=metrics.WINDOW_FRAC)
    sp.add_argument("--spread-source", choices=("eval", "train"), default="eval")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IQLPhaseError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"iqlphase: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
