"""Experiment configuration: nested dataclasses serialised as YAML.

Unknown keys are rejected at every level so typos fail loudly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from ..core import ConfigError
from ..envs import config_class

ALGORITHMS = ("belief_i2q", "rec_i2q", "rec_hyst_iql")
DEFAULT_BUDGETS = {"oracle": 20_000, "honeycomb": 20_000, "gathering": 30_000, "escape": 30_000}


@dataclass
class EnvSection:
    name: str = "oracle"
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class EpsilonSchedule:
    start: float = 0.6
    end: float = 0.05
    decay_fraction: float = 0.5

    def value(self, episode: int, budget: int) -> float:
        horizon = max(1, int(round(self.decay_fraction * budget)))
        if episode >= horizon:
            return self.end
        return self.start + (self.end - self.start) * episode / horizon


@dataclass
class LearningRates:
    q: float = 1e-3
    qss: float = 1e-3
    f: float = 1e-3
    belief: float = 1e-3


@dataclass
class PretrainSection:
    episodes: int = 2000
    max_epochs: int = 200
    patience: int = 10
    batch_episodes: int = 64
    val_fraction: float = 0.1
    kl_warmup_weight: float = 10.0
    kl_warmup_epochs: int = 20
    shared: bool | None = None


@dataclass
class NetworkSection:
    hidden: list[int] = field(default_factory=lambda: [128, 128, 128])
    gru_hidden: int = 64
    belief_hidden: list[int] = field(default_factory=lambda: [64, 64])


@dataclass
class HystereticSection:
    alpha: float = 1.0
    beta: float = 0.1


@dataclass
class ExperimentConfig:
    env: EnvSection = field(default_factory=EnvSection)
    algorithm: str = "belief_i2q"
    gamma: float = 0.99
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    lr: LearningRates = field(default_factory=LearningRates)
    lam: float = 0.1
    latent_dim: int = 16
    m_samples: int = 10
    tau: float = 0.005
    buffer_capacity: int = 10_000
    batch_episodes: int = 32
    warmup_episodes: int = 1
    episodes: int | None = None
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    final_window: int = 1000
    eval_episodes: int = 100
    dataset_path: str | None = None
    belief_checkpoint: str | None = None
    output_dir: str = "runs"
    save_checkpoints: bool = True
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    hysteretic: HystereticSection = field(default_factory=HystereticSection)

    @property
    def budget(self) -> int:
        return self.episodes if self.episodes is not None else DEFAULT_BUDGETS[self.env.name]

    def validate(self) -> "ExperimentConfig":
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        cls = config_class(self.env.name)
        unknown = set(self.env.params) - {f.name for f in fields(cls)}
        need(not unknown, f"unknown {self.env.name} option(s): {sorted(unknown)}")
        need(self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}")
        need(0.0 < self.gamma <= 1.0, "gamma must lie in (0, 1]")
        e = self.epsilon
        need(0.0 <= e.end <= e.start <= 1.0, "epsilon needs 0 <= end <= start <= 1")
        need(0.0 < e.decay_fraction <= 1.0, "epsilon.decay_fraction must lie in (0, 1]")
        for name in ("q", "qss", "f", "belief"):
            need(getattr(self.lr, name) > 0, f"lr.{name} must be positive")
        need(self.lam > 0, "lam must be positive")
        need(self.latent_dim >= 1 and self.m_samples >= 1, "latent_dim and m_samples must be >= 1")
        need(0.0 <= self.tau <= 1.0, "tau must lie in [0, 1]")
        need(self.buffer_capacity >= 1 and self.batch_episodes >= 1, "buffer and batch sizes must be >= 1")
        need(self.warmup_episodes >= 1, "warmup_episodes must be >= 1")
        need(self.budget >= 1, "episodes must be >= 1")
        need(len(self.seeds) >= 1 and all(s >= 0 for s in self.seeds), "seeds must be non-negative")
        need(self.final_window >= 1 and self.eval_episodes >= 0, "bad final_window / eval_episodes")
        p = self.pretrain
        need(p.episodes >= 1 and p.max_epochs >= 1 and p.patience >= 1, "bad pretrain section")
        need(0.0 <= p.val_fraction < 1.0, "pretrain.val_fraction must lie in [0, 1)")
        need(p.kl_warmup_weight >= 1.0 and p.kl_warmup_epochs >= 0, "bad KL warm-up settings")
        h = self.hysteretic
        need(h.alpha > 0 and h.beta > 0 and h.alpha >= h.beta, "hysteretic needs alpha >= beta > 0")
        need(all(x >= 1 for x in self.network.hidden + self.network.belief_hidden), "layer sizes must be >= 1")
        return self

    # -- serialisation ----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        return _build(cls, data or {}, "config").validate()

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(data or {})

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_yaml())
        return path


def _build(cls, data: dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def with_overrides(config: ExperimentConfig, **dotted: Any) -> ExperimentConfig:
    """Copy of ``config`` with ``"lr.q"``-style dotted keys replaced."""
    data = config.to_dict()
    for key, value in dotted.items():
        node = data
        *path, leaf = key.split(".")
        for part in path:
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[leaf] = value
    return ExperimentConfig.from_dict(data)
