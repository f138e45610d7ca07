"""Two-stage training: belief pre-training, then decentralized RL."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .. import __version__
from ..baselines import RecHystIQLAgent, RecI2QAgent, RecurrentConfig
from ..belief import BeliefModel, PretrainConfig, load_belief_models, pretrain, save_belief_models
from ..checkpoint import load_checkpoint, save_checkpoint
from ..core import ConfigError, DecPOMDP
from ..data import LabeledDataset, collect_random, config_digest, load_dataset
from ..envs import make_env
from ..i2q import BeliefI2QAgent, I2QConfig
from .config import ExperimentConfig

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("seed", "episode", "return", "length", "epsilon", "loss_qss", "loss_f", "loss_q")


@dataclass
class RunResult:
    rows: list[dict[str, Any]]
    agents: list
    env: DecPOMDP
    belief_models: dict[int, BeliefModel] | None = None
    out_dir: Path | None = None
    files: dict[str, Path] = field(default_factory=dict)

    def returns(self) -> np.ndarray:
        return np.array([r["return"] for r in self.rows])


def pretrain_config(config: ExperimentConfig, seed: int) -> PretrainConfig:
    p = config.pretrain
    return PretrainConfig(
        latent_dim=config.latent_dim,
        gru_hidden=config.network.gru_hidden,
        mlp_hidden=tuple(config.network.belief_hidden),
        lr=config.lr.belief,
        batch_episodes=p.batch_episodes,
        max_epochs=p.max_epochs,
        patience=p.patience,
        val_fraction=p.val_fraction,
        kl_warmup_weight=p.kl_warmup_weight,
        kl_warmup_epochs=p.kl_warmup_epochs,
        shared=p.shared,
        seed=seed,
    )


def env_digest(env: DecPOMDP) -> str:
    return config_digest(env.name, env.config_dict())


def resolve_dataset(config: ExperimentConfig, env: DecPOMDP) -> LabeledDataset:
    if not config.dataset_path:
        raise ConfigError("belief_i2q needs dataset_path or belief_checkpoint")
    return load_dataset(config.dataset_path, expected_digest=env_digest(env))


def stage_one(config: ExperimentConfig, env: DecPOMDP, seed: int) -> dict[int, BeliefModel]:
    """Obtain frozen belief models from a checkpoint directory or by pre-training."""
    if config.belief_checkpoint:
        return load_belief_models(config.belief_checkpoint, env.n_agents, env.name)
    dataset = resolve_dataset(config, env)
    return pretrain(dataset, env, pretrain_config(config, seed)).models


def build_agents(config: ExperimentConfig, env: DecPOMDP, seed: int, belief_models=None) -> list:
    agents = []
    for i in range(env.n_agents):
        obs_dim = env.obs_dims[i]
        if config.algorithm == "belief_i2q":
            cfg = I2QConfig(
                gamma=config.gamma,
                lam=config.lam,
                lr_q=config.lr.q,
                lr_qss=config.lr.qss,
                lr_f=config.lr.f,
                hidden=tuple(config.network.hidden),
                tau=config.tau,
                m_samples=config.m_samples,
                batch_episodes=config.batch_episodes,
                buffer_capacity=config.buffer_capacity,
            )
            model = belief_models[i] if belief_models is not None else None
            agents.append(BeliefI2QAgent(i, obs_dim, env.n_actions, cfg, model, seed))
        else:
            cfg = RecurrentConfig(
                gamma=config.gamma,
                lam=config.lam,
                lr_q=config.lr.q,
                lr_qss=config.lr.qss,
                lr_f=config.lr.f,
                gru_hidden=config.network.gru_hidden,
                hidden=tuple(config.network.hidden),
                tau=config.tau,
                batch_episodes=config.batch_episodes,
                buffer_capacity=config.buffer_capacity,
                alpha=config.hysteretic.alpha,
                beta=config.hysteretic.beta,
            )
            cls = RecI2QAgent if config.algorithm == "rec_i2q" else RecHystIQLAgent
            agents.append(cls(i, obs_dim, env.n_actions, cfg, seed))
    return agents


def play_episode(env: DecPOMDP, agents, epsilon: float, env_seed: int, store: bool = True):
    """Run one episode. Agents only ever see their own observation and the joint reward."""
    _, obs = env.reset(env_seed)
    for agent, o in zip(agents, obs):
        agent.begin_episode(o.feature_vector)
    total, steps = 0.0, 0
    while True:
        joint = [agent.act(epsilon) for agent in agents]
        res = env.step(joint)
        total += res.reward
        steps += 1
        for agent, a, o in zip(agents, joint, res.next_observations):
            agent.record(a, res.reward, o.feature_vector)
        if res.done:
            break
    if store:
        for agent in agents:
            agent.end_episode(res.terminated)
    return total, steps, res.terminated


def evaluate(env: DecPOMDP, agents, n_episodes: int, seed: int, epsilon: float = 0.0) -> np.ndarray:
    seeds = np.random.default_rng([seed, 3]).integers(0, 2**31 - 1, size=n_episodes)
    return np.array([play_episode(env, agents, epsilon, int(s), store=False)[0] for s in seeds])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def read_metrics(path: str | Path) -> list[dict[str, Any]]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row: dict[str, Any] = {"seed": int(rec["seed"]), "episode": int(rec["episode"]), "length": int(rec["length"])}
            for c in ("return", "epsilon", "loss_qss", "loss_f", "loss_q"):
                row[c] = float(rec[c]) if rec[c] != "" else None
            rows.append(row)
    return rows


def run_experiment(
    config: ExperimentConfig,
    seed: int,
    out_dir: str | Path | None = None,
    belief_models: dict[int, BeliefModel] | None = None,
) -> RunResult:
    """Train one (config, seed) pair end to end; deterministic given both."""
    config.validate()
    torch.set_num_threads(1)
    torch.manual_seed(seed)
    env = make_env(config.env.name, config.env.params)
    if config.algorithm == "belief_i2q" and belief_models is None:
        belief_models = stage_one(config, env, seed)
    torch.manual_seed(seed)
    agents = build_agents(config, env, seed, belief_models if config.algorithm == "belief_i2q" else None)
    budget = config.budget
    env_seeds = np.random.default_rng([seed, 2]).integers(0, 2**31 - 1, size=budget)
    rows = []
    for episode in range(budget):
        eps = config.epsilon.value(episode, budget)
        ret, length, _ = play_episode(env, agents, eps, int(env_seeds[episode]))
        losses: dict[str, list[float]] = {}
        for agent in agents:
            if len(agent.buffer) >= config.warmup_episodes:
                for k, v in agent.update().items():
                    losses.setdefault(k, []).append(v)
                agent.update_targets()
        rows.append(
            {
                "seed": seed,
                "episode": episode,
                "return": float(ret),
                "length": length,
                "epsilon": float(eps),
                **{f"loss_{k}": float(np.mean(v)) for k, v in losses.items()},
            }
        )
        if episode % 500 == 0:
            log.info("seed %d episode %d return %.3f eps %.3f", seed, episode, ret, eps)
    result = RunResult(rows, agents, env, belief_models if config.algorithm == "belief_i2q" else None)
    if out_dir is not None:
        write_run(result, config, seed, Path(out_dir))
    return result


def write_run(result: RunResult, config: ExperimentConfig, seed: int, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = out_dir / f"metrics_seed{seed}.csv"
    metrics.write_text(metrics_csv(result.rows))
    manifest = out_dir / f"manifest_seed{seed}.json"
    manifest.write_text(
        json.dumps(
            {
                "seed": seed,
                "config": config.to_dict(),
                "config_digest": config.digest(),
                "tau": config.tau,
                "env_digest": env_digest(result.env),
                "episodes": len(result.rows),
                "version": __version__,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    result.out_dir = out_dir
    result.files.update(metrics=metrics, manifest=manifest)
    if config.save_checkpoints:
        ckpt_dir = out_dir / f"checkpoints_seed{seed}"
        for agent in result.agents:
            path = save_checkpoint(
                ckpt_dir / f"agent{agent.agent_id}.ckpt",
                {
                    "kind": "agent",
                    "algorithm": config.algorithm,
                    "agent": agent.agent_id,
                    "env": result.env.name,
                    "seed": seed,
                },
                agent.state_dict(),
            )
            result.files[f"agent{agent.agent_id}"] = path
        if result.belief_models is not None:
            save_belief_models(ckpt_dir, result.belief_models, result.env.name)


def load_agents(config: ExperimentConfig, ckpt_dir: str | Path, seed: int = 0):
    """Rebuild agents (and belief models) from a ``checkpoints_seed*`` directory."""
    env = make_env(config.env.name, config.env.params)
    ckpt_dir = Path(ckpt_dir)
    models = load_belief_models(ckpt_dir, env.n_agents, env.name) if config.algorithm == "belief_i2q" else None
    agents = build_agents(config, env, seed, models)
    for agent in agents:
        meta, state = load_checkpoint(ckpt_dir / f"agent{agent.agent_id}.ckpt")
        if meta.get("algorithm") != config.algorithm:
            raise ConfigError(f"checkpoint algorithm {meta.get('algorithm')!r} != {config.algorithm!r}")
        agent.load_state_dict(state)
    return env, agents


def collect_dataset(config: ExperimentConfig, seed: int) -> LabeledDataset:
    env = make_env(config.env.name, config.env.params)
    return collect_random(env, config.pretrain.episodes, seed)
