"""Exhaustive hyper-parameter grid over (grid point x seed) runs."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ..core import ConfigError
from .config import ExperimentConfig, with_overrides
from .runner import run_experiment

LR_GRID = (0.001, 0.0003)
LAMBDA_GRID = (0.1, 0.3)
LATENT_GRID = (8, 16, 32)


def default_axes(algorithm: str) -> dict[str, tuple]:
    if algorithm == "belief_i2q":
        return {
            "lr.q": LR_GRID,
            "lr.qss": LR_GRID,
            "lr.belief": LR_GRID,
            "lr.f": LR_GRID,
            "lam": LAMBDA_GRID,
            "latent_dim": LATENT_GRID,
        }
    if algorithm == "rec_i2q":
        return {"lr.q": LR_GRID, "lr.qss": LR_GRID, "lr.f": LR_GRID, "lam": LAMBDA_GRID}
    if algorithm == "rec_hyst_iql":
        return {"lr.q": LR_GRID}
    raise ConfigError(f"unknown algorithm {algorithm!r}")


def grid_points(axes: Mapping[str, Sequence[Any]]) -> list[dict[str, Any]]:
    if not axes or any(len(v) == 0 for v in axes.values()):
        raise ConfigError("grid is empty")
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


def final_score(returns: Sequence[float], window: int) -> float:
    r = np.asarray(returns, dtype=np.float64)
    return float(r[-min(window, len(r)) :].mean())


@dataclass
class GridResult:
    best_config: ExperimentConfig
    best_point: dict[str, Any]
    ranking: list[dict[str, Any]]
    logs: dict[int, list[Path]] = field(default_factory=dict)


def _run_point(config: ExperimentConfig, seed: int, out_dir: Path, cache: dict | None):
    key = (config.lr.belief, config.latent_dim, seed)
    models = cache.get(key) if cache is not None else None
    res = run_experiment(config, seed, out_dir, belief_models=models)
    if cache is not None and res.belief_models is not None:
        cache[key] = res.belief_models
    return final_score(res.returns(), config.final_window), res.files.get("metrics")


def grid_search(
    base_config: ExperimentConfig,
    out_dir: str | Path,
    axes: Mapping[str, Sequence[Any]] | None = None,
    n_jobs: int = 1,
) -> GridResult:
    """Run every grid point on every configured seed; rank by mean final-window return."""
    axes = default_axes(base_config.algorithm) if axes is None else axes
    points = grid_points(axes)
    out_dir = Path(out_dir)
    configs = [with_overrides(base_config, **p) for p in points]
    jobs = [(k, seed) for k in range(len(points)) for seed in base_config.seeds]
    if n_jobs == 1:
        cache: dict = {}
        outputs = [_run_point(configs[k], s, out_dir / f"point_{k:03d}", cache) for k, s in jobs]
    else:
        from joblib import Parallel, delayed

        outputs = Parallel(n_jobs=n_jobs)(
            delayed(_run_point)(configs[k], s, out_dir / f"point_{k:03d}", None) for k, s in jobs
        )
    per_point: dict[int, list[float]] = {}
    logs: dict[int, list[Path]] = {}
    for (k, _), (score, path) in zip(jobs, outputs):
        per_point.setdefault(k, []).append(score)
        logs.setdefault(k, []).append(path)
    ranking = sorted(
        (
            {"point": k, "overrides": points[k], "score": float(np.mean(s)), "seed_scores": s}
            for k, s in per_point.items()
        ),
        key=lambda r: (-r["score"], r["point"]),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ranking.json").write_text(json.dumps(ranking, indent=2) + "\n")
    best = ranking[0]["point"]
    configs[best].save(out_dir / "best_config.yaml")
    return GridResult(configs[best], points[best], ranking, logs)
