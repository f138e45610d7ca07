"""Learning-curve and belief-state figures with numeric CSV sidecars."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from matplotlib.patches import Ellipse  # noqa: E402

from ..belief import BeliefModel, History, belief_samples  # noqa: E402
from ..core import UsageError  # noqa: E402
from ..envs import OracleEnv  # noqa: E402
from ..envs._grid import MOVES_8  # noqa: E402
from .runner import read_metrics  # noqa: E402


def smooth(series: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what exists."""
    if window < 1:
        raise UsageError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def seed_band(curves: Sequence[Sequence[float]]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std across seeds at every episode."""
    lengths = {len(c) for c in curves}
    if not curves:
        raise UsageError("need at least one seed")
    if len(lengths) != 1:
        raise UsageError(f"episode counts differ across seeds: {sorted(lengths)}")
    arr = np.asarray(curves, dtype=np.float64)
    return arr.mean(axis=0), arr.std(axis=0)


def _returns(log: Any) -> list[float]:
    rows = read_metrics(log) if isinstance(log, (str, Path)) else log
    return [r["return"] for r in rows]


def plot_curves(
    logs: Mapping[str, Sequence[Any]],
    out_dir: str | Path,
    smoothing_window: int = 100,
    title: str = "",
    stem: str = "curves",
) -> dict[str, Path]:
    """Plot mean smoothed return per algorithm with a +-1 std band across seeds.

    ``logs`` maps algorithm name to metrics files (or row lists), one per seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = {}
    for name, seed_logs in logs.items():
        curves = [smooth(_returns(log), smoothing_window) for log in seed_logs]
        series[name] = seed_band(curves)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (mean, std) in series.items():
        x = np.arange(len(mean))
        ax.plot(x, mean, label=name)
        ax.fill_between(x, mean - std, mean + std, alpha=0.25)
    ax.set_xlabel("episode")
    ax.set_ylabel(f"return (smoothed over {smoothing_window})")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    png = out_dir / f"{stem}.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    table = out_dir / f"{stem}.csv"
    n = max(len(m) for m, _ in series.values())
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode"] + [f"{k}_{s}" for k in series for s in ("mean", "std")])
        for i in range(n):
            row: list[Any] = [i]
            for mean, std in series.values():
                row += [repr(float(mean[i])), repr(float(std[i]))] if i < len(mean) else ["", ""]
            w.writerow(row)
    return {"png": png, "csv": table}


# ---------------------------------------------------------------------------
# belief visualisation on Oracle


@dataclass
class BeliefSnapshots:
    pre_means: np.ndarray  # (n, 2) belief means one step before the query
    pre_stds: np.ndarray  # (n, 2) std of the m-sample predictive mixture
    post_means: np.ndarray
    post_stds: np.ndarray
    labels: np.ndarray  # (n,) index of the correct treasure
    treasure_coords: np.ndarray  # (3, 2)
    pre_model_stds: np.ndarray | None = None  # (n, 2) decoder std averaged over samples
    post_model_stds: np.ndarray | None = None

    def classify(self) -> np.ndarray:
        d = ((self.post_means[:, None, :] - self.treasure_coords[None]) ** 2).sum(-1)
        return d.argmin(axis=1)

    def accuracy(self) -> float:
        return float(np.mean(self.classify() == self.labels))


def _toward(src: np.ndarray, dst: np.ndarray) -> int:
    step = tuple(int(v) for v in np.sign(dst - src))
    return MOVES_8.index(step)


def _summary(model: BeliefModel, obs, acts, m: int, gen: torch.Generator):
    with torch.no_grad():
        h = model.encode_history(History(np.asarray(obs), np.asarray(acts, dtype=np.int64)))[None]
        p = belief_samples(model, h, m, gen)
        mean = p.mean.mean(0)[0]
        std = (p.variance.mean(0)[0] + p.mean.var(0, unbiased=False)[0]).sqrt()
        model_std = p.variance.sqrt().mean(0)[0]
    return mean.numpy(), std.numpy(), model_std.numpy()


def belief_snapshots(
    models: Mapping[int, BeliefModel] | BeliefModel,
    env: OracleEnv,
    n_episodes: int = 100,
    seed: int = 0,
    m: int = 10,
    agent: int = 0,
) -> BeliefSnapshots:
    """Scripted episodes: ``agent`` walks straight to the oracle, the others act randomly.

    Beliefs are read from ``agent`` one step before and right after the query.
    Episodes that end before the query are discarded and replaced.
    """
    if not isinstance(env, OracleEnv):
        raise UsageError("belief visualisation is only supported on the Oracle environment")
    model = models if isinstance(models, BeliefModel) else models[agent]
    rng = np.random.default_rng([seed, 4])
    gen = torch.Generator().manual_seed(seed)
    pre_m, pre_s, post_m, post_s, pre_ms, post_ms, labels = [], [], [], [], [], [], []
    attempts = 0
    while len(labels) < n_episodes:
        attempts += 1
        if attempts > 20 * n_episodes:
            raise RuntimeError("could not script enough oracle queries")
        state, obs = env.reset(int(rng.integers(0, 2**31 - 1)))
        hist_obs, hist_act = [obs[agent].feature_vector], []
        pos = env._split(state.feature_vector)[0]
        queried = False
        while True:
            joint = [int(rng.integers(env.n_actions)) for _ in range(env.n_agents)]
            joint[agent] = _toward(pos[agent], env.oracle_cell)
            res = env.step(joint)
            hist_obs.append(res.next_observations[agent].feature_vector)
            hist_act.append(joint[agent])
            pos = env._split(res.next_state.feature_vector)[0]
            if res.next_observations[agent].feature_vector[-1] >= 0:
                queried = True
                break
            if res.done:
                break
        if not queried or res.done:
            continue
        a = _summary(model, hist_obs[:-1], hist_act[:-1], m, gen)
        b = _summary(model, hist_obs, hist_act, m, gen)
        pre_m.append(a[0]), pre_s.append(a[1]), pre_ms.append(a[2])
        post_m.append(b[0]), post_s.append(b[1]), post_ms.append(b[2])
        labels.append(env.correct_treasure_index(res.next_state))
    return BeliefSnapshots(
        np.array(pre_m), np.array(pre_s), np.array(post_m), np.array(post_s), np.array(labels),
        env.treasure_coords(), np.array(pre_ms), np.array(post_ms),
    )


def _draw(ax, groups, coords, title):
    """Dashed: decoder std averaged over samples. Dotted: predictive mixture std."""
    ax.scatter(coords[:, 0], coords[:, 1], marker="s", s=120, c="tab:blue", label="treasures")
    for k, (label, means, model_stds, stds) in enumerate(groups):
        mu = means.mean(0)
        color = f"C{k + 1}"
        ax.scatter(means[:, 0], means[:, 1], s=6, alpha=0.3, color=color)
        ax.plot(*mu, "o", color=color, label=label)
        for sd, ls in ((model_stds.mean(0), "--"), (stds.mean(0), ":")):
            ax.add_patch(Ellipse(tuple(mu), 2 * sd[0], 2 * sd[1], fill=False, ls=ls, color=color))
    ax.set_xlim(-0.3, 1.3)
    ax.set_ylim(-0.3, 1.3)
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.legend(fontsize=7)


def plot_belief(
    models: Mapping[int, BeliefModel] | BeliefModel,
    env: OracleEnv,
    n_episodes: int,
    out_dir: str | Path,
    seed: int = 0,
    m: int = 10,
) -> tuple[dict[str, Path], BeliefSnapshots]:
    """Render pre-query (one group) and post-query (grouped by true treasure) beliefs."""
    snaps = belief_snapshots(models, env, n_episodes, seed, m)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    coords = snaps.treasure_coords
    pre_groups = [("belief", snaps.pre_means, snaps.pre_model_stds, snaps.pre_stds)]
    post_groups = [
        (
            f"belief {k + 1}",
            snaps.post_means[snaps.labels == k],
            snaps.post_model_stds[snaps.labels == k],
            snaps.post_stds[snaps.labels == k],
        )
        for k in range(len(coords))
        if np.any(snaps.labels == k)
    ]
    for name, groups, title in (
        ("belief_pre_query", pre_groups, "one step before query"),
        ("belief_post_query", post_groups, "one step after query"),
    ):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        _draw(ax, groups, coords, title)
        fig.tight_layout()
        files[name] = out_dir / f"{name}.png"
        fig.savefig(files[name], dpi=120)
        plt.close(fig)
    table = out_dir / "belief_groups.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["phase", "group", "n", "mean_x", "mean_y", "model_std_x", "model_std_y", "pred_std_x", "pred_std_y"]
        )
        for phase, groups in (("pre", pre_groups), ("post", post_groups)):
            for label, means, model_stds, stds in groups:
                vals = (*means.mean(0), *model_stds.mean(0), *stds.mean(0))
                w.writerow([phase, label, len(means), *(repr(float(v)) for v in vals)])
    files["csv"] = table
    return files, snaps
