"""Conditional VAE belief model over unobserved state features.

A GRU summarises an agent's history. The history input at step ``k`` is the
observation ``o_k`` concatenated with the one-hot previous action (zeros at
``k = 0``), so the hidden state after step ``t`` conditions on
``o_0, a_0, ..., a_{t-1}, o_t``. The encoder ``q(z | s, h)`` is only used for
pre-training; beliefs are decoded from prior samples.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .core import UsageError
from .data import LabeledDataset
from .nets import freeze, mlp, one_hot

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
LOGVAR_BOUND = 8.0


@dataclass
class History:
    observations: np.ndarray  # (t+1, O); may be empty
    actions: np.ndarray  # (t,)

    @classmethod
    def empty(cls, obs_dim: int) -> "History":
        return cls(np.zeros((0, obs_dim), np.float32), np.zeros(0, np.int64))

    def __len__(self) -> int:
        return len(self.observations)

    def extended(self, action: int, next_obs: np.ndarray) -> "History":
        return History(
            np.vstack([self.observations, np.asarray(next_obs)[None]]),
            np.append(self.actions, int(action)),
        )


@dataclass
class GaussianParams:
    mean: torch.Tensor
    log_variance: torch.Tensor

    @property
    def variance(self) -> torch.Tensor:
        return self.log_variance.exp()


def gaussian_kl(mean: torch.Tensor, log_variance: torch.Tensor) -> torch.Tensor:
    """KL(N(mean, diag(exp(log_variance))) || N(0, I)), summed over the last axis."""
    return 0.5 * (mean.pow(2) + log_variance.exp() - 1.0 - log_variance).sum(-1)


def gaussian_nll(x: torch.Tensor, mean: torch.Tensor, log_variance: torch.Tensor) -> torch.Tensor:
    return 0.5 * (LOG_2PI + log_variance + (x - mean).pow(2) * torch.exp(-log_variance)).sum(-1)


def _bounded(raw: torch.Tensor) -> torch.Tensor:
    # smooth clamp to [-LOGVAR_BOUND, LOGVAR_BOUND]; keeps NLL finite on exact targets
    return LOGVAR_BOUND * torch.tanh(raw / LOGVAR_BOUND)


class BeliefModel(nn.Module):
    def __init__(
        self,
        obs_dim: int,
        n_actions: int,
        target_dim: int,
        latent_dim: int = 16,
        gru_hidden: int = 64,
        mlp_hidden: Sequence[int] = (64, 64),
    ) -> None:
        super().__init__()
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.target_dim = target_dim
        self.latent_dim = latent_dim
        self.gru_hidden = gru_hidden
        self.mlp_hidden = tuple(mlp_hidden)
        self.gru = nn.GRU(obs_dim + n_actions, gru_hidden, batch_first=True)
        self.encoder = mlp(target_dim + gru_hidden, self.mlp_hidden, 2 * latent_dim)
        self.decoder = mlp(gru_hidden + latent_dim, self.mlp_hidden, 2 * target_dim)

    @property
    def belief_dim(self) -> int:
        return 2 * self.target_dim

    def hparams(self) -> dict:
        return {
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "target_dim": self.target_dim,
            "latent_dim": self.latent_dim,
            "gru_hidden": self.gru_hidden,
            "mlp_hidden": list(self.mlp_hidden),
        }

    def _dtype(self) -> torch.dtype:
        return self.gru.weight_ih_l0.dtype

    def history_inputs(self, obs: torch.Tensor, prev_actions: torch.Tensor) -> torch.Tensor:
        """Build GRU inputs from ``obs`` (B, L, O) and actions (B, L-1)."""
        b, length, _ = obs.shape
        acts = torch.zeros(b, length, self.n_actions, dtype=obs.dtype)
        if length > 1:
            acts[:, 1:] = one_hot(prev_actions[:, : length - 1], self.n_actions, obs.dtype)
        return torch.cat([obs, acts], dim=-1)

    def encode_sequence(self, obs: torch.Tensor, prev_actions: torch.Tensor) -> torch.Tensor:
        """Hidden state after every step: (B, L, H)."""
        out, _ = self.gru(self.history_inputs(obs, prev_actions))
        return out

    def step(self, hidden: torch.Tensor, obs: torch.Tensor, prev_action: torch.Tensor | None) -> torch.Tensor:
        """Advance hidden states (B, H) by one (observation, previous action) input."""
        if prev_action is None:
            act = torch.zeros(obs.shape[0], self.n_actions, dtype=obs.dtype)
        else:
            act = one_hot(prev_action, self.n_actions, obs.dtype)
        x = torch.cat([obs, act], dim=-1)[:, None]
        _, h = self.gru(x, hidden[None].contiguous())
        return h[0]

    def initial_hidden(self, batch: int = 1) -> torch.Tensor:
        return torch.zeros(batch, self.gru_hidden, dtype=self._dtype())

    def encode_history(self, history: History) -> torch.Tensor:
        """Hidden vector (H,) for one history; the initial state if it is empty."""
        if len(history) == 0:
            return self.initial_hidden(1)[0]
        obs = torch.as_tensor(np.asarray(history.observations), dtype=self._dtype())[None]
        acts = torch.as_tensor(np.asarray(history.actions), dtype=torch.long)[None]
        return self.encode_sequence(obs, acts)[0, -1]

    def posterior(self, target: torch.Tensor, hidden: torch.Tensor) -> GaussianParams:
        out = self.encoder(torch.cat([target, hidden], dim=-1))
        mean, raw = out.split(self.latent_dim, dim=-1)
        return GaussianParams(mean, _bounded(raw))

    def decode(self, hidden: torch.Tensor, z: torch.Tensor) -> GaussianParams:
        if z.shape[-1] != self.latent_dim:
            raise UsageError(f"z must have {self.latent_dim} components")
        hidden = hidden.expand(*z.shape[:-1], hidden.shape[-1])
        out = self.decoder(torch.cat([hidden, z], dim=-1))
        mean, raw = out.split(self.target_dim, dim=-1)
        return GaussianParams(mean, _bounded(raw))


def elbo_terms(
    model: BeliefModel,
    target: torch.Tensor,
    hidden: torch.Tensor,
    n_mc: int = 1,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-row (reconstruction NLL averaged over MC samples, closed-form KL)."""
    if n_mc < 1:
        raise UsageError("n_mc must be >= 1")
    q = model.posterior(target, hidden)
    if noise is None:
        noise = torch.randn(
            (n_mc, *q.mean.shape), generator=generator, dtype=q.mean.dtype
        )
    z = q.mean + torch.exp(0.5 * q.log_variance) * noise
    p = model.decode(hidden, z)
    recon = gaussian_nll(target, p.mean, p.log_variance).mean(0)
    return recon, gaussian_kl(q.mean, q.log_variance)


def elbo_loss(
    model: BeliefModel,
    target: torch.Tensor,
    hidden: torch.Tensor,
    n_mc: int = 1,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    kl_weight: float = 1.0,
) -> torch.Tensor:
    """Negated ELBO averaged over rows: reconstruction NLL plus KL to N(0, I).

    ``kl_weight`` only exists for the pre-training warm-up schedule; the
    objective proper uses 1.
    """
    recon, kl = elbo_terms(model, target, hidden, n_mc, noise, generator)
    return (recon + kl_weight * kl).mean()


def belief_samples(
    model: BeliefModel, hidden: torch.Tensor, m: int, generator: torch.Generator | None = None
) -> GaussianParams:
    """Decode ``m`` prior draws for each hidden row; tensors are (m, B, D)."""
    if m < 1:
        raise UsageError("m must be >= 1")
    z = torch.randn((m, hidden.shape[0], model.latent_dim), generator=generator, dtype=hidden.dtype)
    return model.decode(hidden, z)


def sample_belief(
    model: BeliefModel,
    hidden: torch.Tensor,
    m: int,
    generator: torch.Generator | int | None = None,
) -> torch.Tensor:
    """Belief vector [mean of decoded means, mean of decoded variances], (B, 2D).

    ``hidden`` is a (B, H) batch of encoded histories (see ``encode_history``).
    An integer ``generator`` is used as a seed.
    """
    if isinstance(generator, int):
        generator = torch.Generator().manual_seed(generator)
    with torch.no_grad():
        p = belief_samples(model, hidden, m, generator)
        return torch.cat([p.mean.mean(0), p.variance.mean(0)], dim=-1)


def predictive_std(model: BeliefModel, hidden: torch.Tensor, m: int, generator=None) -> torch.Tensor:
    """Std of the m-component predictive mixture: sqrt(mean variance + variance of means)."""
    if isinstance(generator, int):
        generator = torch.Generator().manual_seed(generator)
    with torch.no_grad():
        p = belief_samples(model, hidden, m, generator)
        return (p.variance.mean(0) + p.mean.var(0, unbiased=False)).sqrt()


def belief_of_history(model: BeliefModel, history: History, m: int, seed: int) -> np.ndarray:
    with torch.no_grad():
        h = model.encode_history(history)[None]
    return sample_belief(model, h, m, seed)[0].numpy()


# ---------------------------------------------------------------------------
# pre-training


@dataclass
class PretrainConfig:
    latent_dim: int = 16
    gru_hidden: int = 64
    mlp_hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-3
    batch_episodes: int = 64
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.1
    n_mc: int = 1
    # KL weight decays linearly from kl_warmup_weight to 1 over kl_warmup_epochs,
    # so the decoder learns to read the history before the latent can shortcut it.
    kl_warmup_weight: float = 10.0
    kl_warmup_epochs: int = 20
    shared: bool | None = None  # None: share iff the environment shares observations
    seed: int = 0


@dataclass
class PretrainResult:
    models: dict[int, BeliefModel]
    train_loss: dict[int, list[float]] = field(default_factory=dict)
    val_loss: dict[int, list[float]] = field(default_factory=dict)
    shared: bool = True


@dataclass
class _Sequences:
    obs: torch.Tensor  # (E, L, O) padded
    actions: torch.Tensor  # (E, L-1)
    targets: torch.Tensor  # (E, L, D)
    mask: torch.Tensor  # (E, L) bool


def _sequences(dataset: LabeledDataset, agents: Sequence[int], hidden_fn) -> _Sequences:
    rows = [(ep, i) for ep in dataset.episodes for i in agents]
    length = max(ep.length + 1 for ep, _ in rows)
    e = len(rows)
    o_dim = rows[0][0].observations.shape[2]
    d_dim = hidden_fn(rows[0][0].states[0]).shape[-1]
    obs = np.zeros((e, length, o_dim), np.float32)
    acts = np.zeros((e, max(length - 1, 1)), np.int64)
    tgt = np.zeros((e, length, d_dim), np.float32)
    mask = np.zeros((e, length), bool)
    for k, (ep, i) in enumerate(rows):
        n = ep.length + 1
        obs[k, :n] = ep.observations[:, i]
        acts[k, : n - 1] = ep.actions[:, i]
        tgt[k, :n] = hidden_fn(ep.states)
        mask[k, :n] = True
    return _Sequences(*(torch.as_tensor(a) for a in (obs, acts, tgt, mask)))


def _sequence_loss(model, seq: _Sequences, idx, n_mc, generator, kl_weight=1.0) -> torch.Tensor:
    h = model.encode_sequence(seq.obs[idx], seq.actions[idx])
    m = seq.mask[idx]
    return elbo_loss(model, seq.targets[idx][m], h[m], n_mc=n_mc, generator=generator, kl_weight=kl_weight)


def kl_weight_at(epoch: int, cfg: "PretrainConfig") -> float:
    if epoch >= cfg.kl_warmup_epochs:
        return 1.0
    frac = epoch / cfg.kl_warmup_epochs
    return cfg.kl_warmup_weight + (1.0 - cfg.kl_warmup_weight) * frac


def _train_one(seq: _Sequences, model: BeliefModel, cfg: PretrainConfig, rng, gen):
    n = seq.obs.shape[0]
    perm = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n > 1 else 0
    n_val = min(n_val, n - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    best, best_state, stale = math.inf, None, 0
    train_hist, val_hist = [], []
    for epoch in range(cfg.max_epochs):
        model.train()
        order = rng.permutation(train_idx)
        beta = kl_weight_at(epoch, cfg)
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_episodes):
            idx = torch.as_tensor(order[start : start + cfg.batch_episodes])
            loss = _sequence_loss(model, seq, idx, cfg.n_mc, gen, beta)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        train_hist.append(total / max(count, 1))
        if n_val:
            with torch.no_grad():
                vgen = torch.Generator().manual_seed(cfg.seed + 7919)
                val = float(_sequence_loss(model, seq, torch.as_tensor(val_idx), 1, vgen))
        else:
            val = train_hist[-1]
        val_hist.append(val)
        log.debug("epoch %d train %.4f val %.4f", epoch, train_hist[-1], val)
        if epoch < cfg.kl_warmup_epochs:
            continue  # model selection starts once the objective is the plain ELBO
        if val < best - 1e-6:
            best, best_state, stale = val, copy.deepcopy(model.state_dict()), 0
        else:
            stale += 1
        if stale >= cfg.patience:
            break
    if best_state is not None:  # otherwise training ended inside the warm-up: keep the last weights
        model.load_state_dict(best_state)
    return train_hist, val_hist


def pretrain(dataset: LabeledDataset, env, config: PretrainConfig | None = None) -> PretrainResult:
    """Fit one belief model per agent, or one shared model, on a labelled dataset.

    ``env`` supplies ``hidden_features`` (the prediction target) and the action
    count; it must match the environment the dataset was collected from.
    """
    cfg = config or PretrainConfig()
    if len(dataset) == 0:
        raise UsageError("cannot pre-train on an empty dataset")
    if dataset.env_name != env.name:
        raise UsageError(f"dataset is from {dataset.env_name!r}, env is {env.name!r}")
    shared = env.shared_observation if cfg.shared is None else cfg.shared
    groups = [list(range(env.n_agents))] if shared else [[i] for i in range(env.n_agents)]
    torch.manual_seed(cfg.seed)
    result = PretrainResult(models={}, shared=shared)
    for g, agents in enumerate(groups):
        seq = _sequences(dataset, agents, env.hidden_features)
        model = BeliefModel(
            seq.obs.shape[-1], env.n_actions, seq.targets.shape[-1], cfg.latent_dim, cfg.gru_hidden, cfg.mlp_hidden
        )
        rng = np.random.default_rng([cfg.seed, g])
        gen = torch.Generator().manual_seed(cfg.seed * 1000 + g)
        train_hist, val_hist = _train_one(seq, model, cfg, rng, gen)
        model.eval()
        freeze(model)
        for i in agents:
            result.models[i] = model
            result.train_loss[i] = train_hist
            result.val_loss[i] = val_hist
    return result


# ---------------------------------------------------------------------------
# persistence


def save_belief_models(out_dir: str | Path, models: dict[int, BeliefModel], env_name: str) -> list[Path]:
    """Write one checkpoint per distinct model: ``belief_shared.ckpt`` or ``belief_agent{i}.ckpt``."""
    out_dir = Path(out_dir)
    distinct = {id(m) for m in models.values()}
    paths = []
    if len(distinct) == 1 and len(models) > 1:
        items = [("shared", next(iter(models.values())))]
    else:
        items = [(str(i), m) for i, m in sorted(models.items())]
    for agent, model in items:
        name = "belief_shared.ckpt" if agent == "shared" else f"belief_agent{agent}.ckpt"
        meta = {"kind": "belief", "env": env_name, "agent": agent, "n_agents": len(models), **model.hparams()}
        paths.append(save_checkpoint(out_dir / name, meta, {"state_dict": model.state_dict()}))
    return paths


def load_belief_model(path: str | Path) -> tuple[dict, BeliefModel]:
    meta, payload = load_checkpoint(path)
    if meta.get("kind") != "belief":
        raise UsageError(f"{path} is not a belief checkpoint")
    model = BeliefModel(
        meta["obs_dim"], meta["n_actions"], meta["target_dim"], meta["latent_dim"], meta["gru_hidden"], meta["mlp_hidden"]
    )
    model.load_state_dict(payload["state_dict"])
    model.eval()
    freeze(model)
    return meta, model


def load_belief_models(directory: str | Path, n_agents: int, env_name: str | None = None) -> dict[int, BeliefModel]:
    directory = Path(directory)
    shared = directory / "belief_shared.ckpt"
    if shared.exists():
        meta, model = load_belief_model(shared)
        if env_name and meta["env"] != env_name:
            raise UsageError(f"belief checkpoint is for {meta['env']!r}, not {env_name!r}")
        return {i: model for i in range(n_agents)}
    models = {}
    for i in range(n_agents):
        path = directory / f"belief_agent{i}.ckpt"
        if not path.exists():
            raise UsageError(f"missing belief checkpoint {path}")
        meta, models[i] = load_belief_model(path)
        if env_name and meta["env"] != env_name:
            raise UsageError(f"belief checkpoint is for {meta['env']!r}, not {env_name!r}")
    return models


__all__ = [
    "BeliefModel",
    "GaussianParams",
    "History",
    "PretrainConfig",
    "PretrainResult",
    "belief_of_history",
    "belief_samples",
    "elbo_loss",
    "elbo_terms",
    "gaussian_kl",
    "gaussian_nll",
    "load_belief_models",
    "predictive_std",
    "pretrain",
    "sample_belief",
    "save_belief_models",
]
