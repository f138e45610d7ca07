"""Command line entry point: ``beliefi2q <subcommand> --config FILE --seed N --out DIR``."""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path

import torch

from ..belief import load_belief_models, pretrain, save_belief_models
from ..checkpoint import CheckpointError
from ..core import ConfigError, UsageError
from ..data import DatasetError, load_dataset, save_dataset
from ..envs import make_env
from .config import ExperimentConfig
from .grid import grid_search
from .plots import plot_belief, plot_curves
from .runner import collect_dataset, env_digest, evaluate, load_agents, pretrain_config, run_experiment

log = logging.getLogger("beliefi2q")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return cfg.validate()


def cmd_collect(args) -> int:
    cfg = _config(args)
    if args.env:
        cfg.env.name, cfg.env.params = args.env, {}
    if args.episodes is not None:
        cfg.pretrain.episodes = args.episodes
    cfg.validate()
    out = Path(args.out)
    path = out if out.suffix else out / "dataset.bin"
    ds = collect_dataset(cfg, args.seed)
    save_dataset(ds, path)
    print(f"wrote {len(ds.episodes)} episodes to {path}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    torch.set_num_threads(1)
    env = make_env(cfg.env.name, cfg.env.params)
    if not cfg.dataset_path:
        raise ConfigError("pretrain needs dataset_path in the config")
    ds = load_dataset(cfg.dataset_path, expected_digest=env_digest(env))
    result = pretrain(ds, env, pretrain_config(cfg, args.seed))
    paths = save_belief_models(args.out, result.models, env.name)
    best = {i: round(min(v), 4) for i, v in result.val_loss.items() if v}
    print(f"best validation loss {best}; wrote {', '.join(str(p) for p in paths)}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    for seed in seeds:
        res = run_experiment(cfg, seed, args.out)
        tail = res.returns()[-cfg.final_window :]
        print(f"seed {seed}: final-window mean return {tail.mean():.4f} -> {res.files['metrics']}")
    return 0


def cmd_grid(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    res = grid_search(cfg, args.out, n_jobs=args.jobs)
    print(f"best point {json.dumps(res.best_point)} score {res.ranking[0]['score']:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    torch.set_num_threads(1)
    env, agents = load_agents(cfg, args.checkpoint, args.seed or 0)
    returns = evaluate(env, agents, args.episodes, args.seed or 0, args.epsilon)
    summary = {"episodes": len(returns), "mean": float(returns.mean()), "std": float(returns.std())}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_plot_curves(args) -> int:
    logs: dict[str, list[Path]] = {}
    for spec in args.logs:
        alg, _, pattern = spec.partition("=")
        if not pattern:
            raise UsageError(f"expected ALG=GLOB, got {spec!r}")
        paths = sorted(glob.glob(pattern))
        if not paths:
            raise UsageError(f"no metrics files match {pattern!r}")
        logs[alg] = paths
    files = plot_curves(logs, args.out, smoothing_window=args.window, title=args.title)
    print(f"wrote {files['png']} and {files['csv']}")
    return 0


def cmd_plot_belief(args) -> int:
    cfg = _config(args)
    torch.set_num_threads(1)
    env = make_env(cfg.env.name, cfg.env.params)
    ckpt = args.checkpoint or cfg.belief_checkpoint
    if not ckpt:
        raise ConfigError("plot-belief needs --checkpoint or belief_checkpoint in the config")
    models = load_belief_models(ckpt, env.n_agents, env.name)
    files, snaps = plot_belief(models, env, args.episodes, args.out, seed=args.seed or 0, m=cfg.m_samples)
    print(
        f"post-query accuracy {snaps.accuracy():.3f}; mean std pre {snaps.pre_stds.mean():.3f} "
        f"post {snaps.post_stds.mean():.3f}; wrote {files['belief_pre_query']}, {files['belief_post_query']}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beliefi2q", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help, seed_default=None, needs_out=True):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=str, default=None, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", type=str, required=needs_out, default=None, help="output directory")
        p.set_defaults(func=func)
        return p

    p = add("collect", cmd_collect, "collect random labelled episodes", seed_default=0)
    p.add_argument("--env", default=None, help="environment name (overrides the config)")
    p.add_argument("--episodes", type=int, default=None, help="number of episodes (default: pretrain.episodes)")
    add("pretrain", cmd_pretrain, "pre-train belief models on a dataset", seed_default=0)
    add("train", cmd_train, "run training for one seed (or all configured seeds)")
    p = add("grid-search", cmd_grid, "exhaustive grid over the configured algorithm")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p = add("eval", cmd_eval, "greedy evaluation of saved agents", needs_out=False)
    p.add_argument("--checkpoint", required=True, help="checkpoints_seed* directory")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=0.0)
    p = add("plot-curves", cmd_plot_curves, "learning curves with a ±1 std band")
    p.add_argument("logs", nargs="+", help="ALG=GLOB pairs of metrics files")
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--title", default="")
    p = add("plot-belief", cmd_plot_belief, "belief states before and after the oracle query")
    p.add_argument("--checkpoint", default=None, help="directory holding belief checkpoints")
    p.add_argument("--episodes", type=int, default=100)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
