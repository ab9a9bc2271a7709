"""Command-line interface.

Every pipeline subcommand runs the stage chain up to and including its
stage inside the configured run directory; stages with unchanged inputs
cache-hit, so invoking e.g. `estimate` right after `calibrate` only does
the new work. Exit codes: 0 ok, 2 config error, 3 data error, 4 stage
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, NutripipeError, StageFailure
from .pipeline import STAGE_NAMES, run_pipeline
from .synthetic import write_synthetic_corpus

log = logging.getLogger("nutripipe")

# subcommand -> last pipeline stage it runs
STAGE_COMMANDS = {
    "ingest-db": "ingest_db",
    "ingest-posts": "ingest_posts",
    "calibrate": "calibrate",
    "estimate": "estimate",
    "featurize": "featurize",
    "mine-discriminators": "mine",
    "train": "train",
    "evaluate": "evaluate",
    "explain": "explain",
    "report": "report",
    "run": "report",
}


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="pipeline config file (TOML-style)")
    parser.add_argument("--food-db", help="food database CSV")
    parser.add_argument("--posts", help="posts JSON Lines file")
    parser.add_argument("--vectors", help="precomputed EMBV1 vector store")
    parser.add_argument("--fallback-dim", type=int, help="fallback embedder dimension")
    parser.add_argument("--out-dir", help="run directory")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--force", action="store_true", help="ignore cached stage results")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nutripipe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run pipeline through the {STAGE_COMMANDS[name]} stage")
        _add_common(p)
        if name == "calibrate":
            p.add_argument("--sample-size", type=int)
            p.add_argument("--quantile", type=float)
        if name == "estimate":
            p.add_argument("--threshold", type=float)
            p.add_argument("--low", type=float, help="kcal lower bound")
            p.add_argument("--high", type=float, help="kcal upper bound")
        if name == "ingest-posts":
            p.add_argument("--covid-bounds", help="ISO start,end of the during-COVID period")
        if name == "mine-discriminators":
            p.add_argument("--cutoff", type=float)
            p.add_argument("--alpha", type=float)
        if name in ("mine-discriminators", "train", "explain"):
            p.add_argument("--task", choices=["engagement", "resonance"])
        if name == "train":
            p.add_argument("--features", help="single feature set to train, e.g. C+N+E")
        if name == "explain":
            p.add_argument("--instances", help="'all', a count, or comma-separated post ids")
            p.add_argument("--mode", choices=["exact", "sample"])
            p.add_argument("--background-size", type=int)
            p.add_argument("--permutations", type=int)

    p = sub.add_parser("tune", help="hyperparameter search on the training split")
    _add_common(p)
    p.add_argument("--task", choices=["engagement", "resonance"], default="engagement")
    p.add_argument("--n-random", type=int, default=20)
    p.add_argument("--full-grid", action="store_true", help="include the 50,000-estimator grid point")

    p = sub.add_parser("gen-synthetic", help="write the bundled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--posts", type=int, default=5000)
    p.add_argument("--foods", type=int, default=1200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-q", "--quiet", action="store_true")

    return parser


def _build_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {
        "food_db": getattr(args, "food_db", None),
        "posts": getattr(args, "posts", None),
        "vectors": getattr(args, "vectors", None),
        "fallback_dim": getattr(args, "fallback_dim", None),
        "out_dir": getattr(args, "out_dir", None),
        "master_seed": getattr(args, "seed", None),
        "sample_size": getattr(args, "sample_size", None),
        "quantile": getattr(args, "quantile", None),
        "threshold": getattr(args, "threshold", None),
        "kcal_low": getattr(args, "low", None),
        "kcal_high": getattr(args, "high", None),
        "cutoff": getattr(args, "cutoff", None),
        "alpha": getattr(args, "alpha", None),
        "explain_mode": getattr(args, "mode", None),
        "background_size": getattr(args, "background_size", None),
        "explain_permutations": getattr(args, "permutations", None),
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    covid = getattr(args, "covid_bounds", None)
    if covid:
        try:
            start, end = covid.split(",")
        except ValueError as exc:
            raise ConfigError("--covid-bounds expects START,END ISO timestamps") from exc
        cfg.covid_start, cfg.covid_end = start.strip(), end.strip()
    task = getattr(args, "task", None)
    if task and args.command != "tune":
        cfg.tasks = [task]
    features = getattr(args, "features", None)
    if features:
        cfg.feature_sets = [features]
        cfg.explain_feature_sets = [s for s in cfg.explain_feature_sets if s == features] or [features]
    instances = getattr(args, "instances", None)
    if instances:
        if instances == "all":
            cfg.explain_instances = 10**9
        elif instances.isdigit():
            cfg.explain_instances = int(instances)
        else:
            cfg.explain_instance_ids = [s.strip() for s in instances.split(",") if s.strip()]
    return cfg


def _cmd_stage(args) -> int:
    cfg = _build_config(args)
    last = STAGE_COMMANDS[args.command]
    stages = STAGE_NAMES[: STAGE_NAMES.index(last) + 1]
    ctx = run_pipeline(cfg, stages=stages, force=args.force)
    for name in stages:
        counts = ctx.manifest.get("stages", {}).get(name, {}).get("counts", {})
        log.info("%s: %s", name, counts)
    print(json.dumps({"run_dir": ctx.run_dir, "stages": stages[-1:]}, sort_keys=True))
    return 0


def _cmd_tune(args) -> int:
    from .model import FULL_GRID, TuningGrid, tune_hyperparameters
    from .pipeline import _load_task_data

    cfg = _build_config(args)
    ctx = run_pipeline(cfg, stages=STAGE_NAMES[: STAGE_NAMES.index("mine") + 1], force=args.force)
    data = _load_task_data(ctx, args.task)
    X, _ = data.table.matrix_for("C")
    grid = FULL_GRID if args.full_grid else TuningGrid()
    best = tune_hyperparameters(
        X[data.train_idx],
        data.y[data.train_idx],
        grid=grid,
        n_random=args.n_random,
        seed=cfg.stage_seed(f"tune:{args.task}"),
    )
    out = os.path.join(ctx.run_dir, "models", args.task, "tuned.json")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    payload = {
        "n_estimators": best.n_estimators,
        "max_depth": best.max_depth,
        "learning_rate": best.learning_rate,
    }
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps({"task": args.task, **payload}, sort_keys=True))
    return 0


def _cmd_gen_synthetic(args) -> int:
    db_path, posts_path = write_synthetic_corpus(
        args.out, n_posts=args.posts, n_foods=args.foods, seed=args.seed
    )
    print(json.dumps({"food_db": db_path, "posts": posts_path}, sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if getattr(args, "verbose", False) else logging.INFO
    if getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "gen-synthetic":
            return _cmd_gen_synthetic(args)
        if args.command == "tune":
            return _cmd_tune(args)
        return _cmd_stage(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except StageFailure as exc:
        log.error("%s", exc)
        if isinstance(exc.cause, ConfigError):
            return 2
        if isinstance(exc.cause, DataError):
            return 3
        return 4
    except NutripipeError as exc:
        log.error("%s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
