"""Recurrent DTDE baselines: Rec-I2Q and recurrent hysteretic IQL.

Both learn their history representation from the RL loss alone. Hidden
states are recomputed from the start of each sampled episode every update.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from .core import UsageError
from .data import LocalEpisode, ReplayBuffer
from .i2q import epsilon_greedy
from .nets import PairCritic, QNetwork, TransitionModel, detached_params, freeze, one_hot, soft_update


@dataclass(frozen=True)
class HystereticRates:
    alpha: float = 1.0
    beta: float = 0.1

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise UsageError("hysteretic rates must be positive")
        if self.alpha < self.beta:
            raise UsageError("hysteretic rates need alpha >= beta")


def hysteretic_update(q_table: np.ndarray, transition, rates: HystereticRates, gamma: float):
    """Tabular hysteretic Q-learning step on ``q_table[obs, action]``.

    ``transition`` is ``(obs, action, reward, next_obs, done)``. Returns the
    updated copy of the table and the TD error.
    """
    o, a, r, o2, done = transition
    q = np.array(q_table, dtype=np.float64, copy=True)
    boot = 0.0 if done else gamma * np.max(q[o2])
    psi = r + boot - q[o, a]
    rate = rates.alpha if psi > 0 else rates.beta
    q[o, a] = q[o, a] + rate * psi
    return q, psi


class RecurrentEncoder(nn.Module):
    """GRU over [o_k, one_hot(a_{k-1})] inputs (zero action at k = 0)."""

    def __init__(self, obs_dim: int, n_actions: int, hidden: int = 64) -> None:
        super().__init__()
        self.n_actions = n_actions
        self.hidden = hidden
        self.gru = nn.GRU(obs_dim + n_actions, hidden, batch_first=True)

    def forward(self, obs: torch.Tensor, prev_actions: torch.Tensor) -> torch.Tensor:
        b, length, _ = obs.shape
        acts = torch.zeros(b, length, self.n_actions, dtype=obs.dtype)
        if length > 1:
            acts[:, 1:] = one_hot(prev_actions[:, : length - 1], self.n_actions, obs.dtype)
        out, _ = self.gru(torch.cat([obs, acts], dim=-1))
        return out

    def step(self, hidden: torch.Tensor | None, obs: torch.Tensor, prev_action: int | None) -> torch.Tensor:
        act = torch.zeros(1, self.n_actions, dtype=obs.dtype)
        if prev_action is not None:
            act[0, prev_action] = 1.0
        x = torch.cat([obs[None], act], dim=-1)[:, None]
        h0 = None if hidden is None else hidden[None, None]
        _, h = self.gru(x, h0)
        return h[0, 0]


@dataclass
class EpisodeBatch:
    obs: torch.Tensor  # (B, L+1, O)
    actions: torch.Tensor  # (B, L)
    rewards: torch.Tensor  # (B, L)
    dones: torch.Tensor  # (B, L)
    mask: torch.Tensor  # (B, L)

    @classmethod
    def from_episodes(cls, episodes: Sequence[LocalEpisode], dtype=torch.float32) -> "EpisodeBatch":
        if not episodes or not all(isinstance(e, LocalEpisode) for e in episodes):
            raise UsageError("recurrent updates need a batch of whole LocalEpisodes")
        length = max(e.length for e in episodes)
        b, o_dim = len(episodes), episodes[0].observations.shape[-1]
        obs = np.zeros((b, length + 1, o_dim))
        acts = np.zeros((b, length), np.int64)
        rew = np.zeros((b, length))
        done = np.zeros((b, length))
        mask = np.zeros((b, length))
        for k, e in enumerate(episodes):
            n = e.length
            obs[k, : n + 1] = e.observations
            acts[k, :n] = e.actions
            rew[k, :n] = e.rewards
            done[k, n - 1] = float(e.terminated)
            mask[k, :n] = 1.0
        t = lambda a: torch.as_tensor(a, dtype=dtype)  # noqa: E731
        return cls(t(obs), torch.as_tensor(acts), t(rew), t(done), t(mask))


def _masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return (x * mask).sum() / mask.sum().clamp_min(1.0)


# ---------------------------------------------------------------------------
# Rec-I2Q


class RecurrentI2QNetworks(nn.Module):
    def __init__(self, obs_dim: int, n_actions: int, gru_hidden: int = 64, hidden: Sequence[int] = (128, 128, 128)):
        super().__init__()
        self.encoder = RecurrentEncoder(obs_dim, n_actions, gru_hidden)
        self.q_ss = PairCritic(gru_hidden, hidden)
        self.f = TransitionModel(gru_hidden, n_actions, gru_hidden, hidden)
        self.q = QNetwork(gru_hidden, n_actions, hidden)
        self.q_ss_target = freeze(copy.deepcopy(self.q_ss))
        self.q_target = freeze(copy.deepcopy(self.q))


def rec_i2q_losses(nets: RecurrentI2QNetworks, batch: EpisodeBatch, gamma: float, lam: float):
    """(qss, f, q) losses with the history encoding standing in for the state."""
    enc = nets.encoder(batch.obs, batch.actions)
    h, h_next = enc[:, :-1], enc[:, 1:]
    hd, hn = h.detach(), h_next.detach()
    a, r, d, m = batch.actions, batch.rewards, batch.dones, batch.mask
    with torch.no_grad():
        a_star = nets.q(hn).argmax(-1)
        boot_ss = nets.q_ss_target(hn, nets.f(hn, a_star))
        target_ss = r + gamma * (1.0 - d) * boot_ss
        boot_q = nets.q_target(nets.f(hd, a)).max(-1).values
        target_q = r + gamma * (1.0 - d) * boot_q
    l_qss = _masked_mean((nets.q_ss(h, h_next) - target_ss).pow(2), m)
    pred = nets.f(hd, a)
    value = functional_call(nets.q_ss, detached_params(nets.q_ss), (hd, pred))
    l_f = _masked_mean(-(lam * value - (pred - hn).pow(2).sum(-1)), m)
    q_sa = nets.q(h).gather(-1, a[..., None]).squeeze(-1)
    l_q = _masked_mean((q_sa - target_q).pow(2), m)
    return l_qss, l_f, l_q


def rec_i2q_update(nets, optimizers, episodes, gamma: float, lam: float) -> dict[str, float]:
    """One gradient step on all three objectives; encoder gets qss and q gradients."""
    batch = EpisodeBatch.from_episodes(episodes)
    l_qss, l_f, l_q = rec_i2q_losses(nets, batch, gamma, lam)
    for opt in optimizers:
        opt.zero_grad()
    (l_qss + l_f + l_q).backward()
    for opt in optimizers:
        opt.step()
    return {"qss": l_qss.item(), "f": l_f.item(), "q": l_q.item()}


# ---------------------------------------------------------------------------
# Rec-Hyst-IQL


class RecurrentQNetworks(nn.Module):
    def __init__(self, obs_dim: int, n_actions: int, gru_hidden: int = 64, hidden: Sequence[int] = (128, 128, 128)):
        super().__init__()
        self.encoder = RecurrentEncoder(obs_dim, n_actions, gru_hidden)
        self.q = QNetwork(gru_hidden, n_actions, hidden)
        self.encoder_target = freeze(copy.deepcopy(self.encoder))
        self.q_target = freeze(copy.deepcopy(self.q))


def hysteretic_loss(nets: RecurrentQNetworks, batch: EpisodeBatch, rates: HystereticRates, gamma: float):
    """Squared TD error weighted by alpha (positive error) or beta (otherwise)."""
    enc = nets.encoder(batch.obs, batch.actions)
    q_sa = nets.q(enc[:, :-1]).gather(-1, batch.actions[..., None]).squeeze(-1)
    with torch.no_grad():
        enc_t = nets.encoder_target(batch.obs, batch.actions)
        boot = nets.q_target(enc_t[:, 1:]).max(-1).values
        target = batch.rewards + gamma * (1.0 - batch.dones) * boot
    psi = target - q_sa
    weight = torch.where(psi.detach() > 0, rates.alpha, rates.beta)
    return _masked_mean(weight * psi.pow(2), batch.mask)


# ---------------------------------------------------------------------------
# agents


@dataclass
class RecurrentConfig:
    gamma: float = 0.99
    lam: float = 0.1
    lr_q: float = 1e-3
    lr_qss: float = 1e-3
    lr_f: float = 1e-3
    gru_hidden: int = 64
    hidden: tuple[int, ...] = (128, 128, 128)
    tau: float = 0.005
    batch_episodes: int = 32
    buffer_capacity: int = 10_000
    alpha: float = 1.0
    beta: float = 0.1


class _RecurrentAgent:
    def __init__(self, agent_id: int, obs_dim: int, n_actions: int, config: RecurrentConfig, seed: int = 0):
        self.agent_id = agent_id
        self.config = config
        self.n_actions = n_actions
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.rng = np.random.default_rng([seed, agent_id, 1])

    def begin_episode(self, obs: np.ndarray) -> None:
        self._obs, self._acts, self._rews = [np.asarray(obs)], [], []
        with torch.no_grad():
            self._h = self.nets.encoder.step(None, torch.as_tensor(obs), None)

    def act(self, epsilon: float) -> int:
        with torch.no_grad():
            q = self.nets.q(self._h[None])[0].numpy()
        return epsilon_greedy(q, epsilon, self.rng)

    def record(self, action: int, reward: float, next_obs: np.ndarray) -> None:
        self._acts.append(int(action))
        self._rews.append(float(reward))
        self._obs.append(np.asarray(next_obs))
        with torch.no_grad():
            self._h = self.nets.encoder.step(self._h, torch.as_tensor(next_obs), int(action))

    def end_episode(self, terminated: bool) -> LocalEpisode:
        ep = LocalEpisode(
            observations=np.stack(self._obs),
            actions=np.asarray(self._acts, dtype=np.int64),
            rewards=np.asarray(self._rews, dtype=np.float32),
            terminated=terminated,
        )
        self.buffer.push(ep)
        return ep

    def sample_episodes(self) -> list[LocalEpisode]:
        return self.buffer.sample("episodes", self.config.batch_episodes, self.rng)

    def state_dict(self) -> dict:
        return {"nets": self.nets.state_dict(), **{k: o.state_dict() for k, o in self._optimizers().items()}}

    def load_state_dict(self, state: dict) -> None:
        self.nets.load_state_dict(state["nets"])
        for k, o in self._optimizers().items():
            o.load_state_dict(state[k])


class RecI2QAgent(_RecurrentAgent):
    algorithm = "rec_i2q"

    def __init__(self, agent_id, obs_dim, n_actions, config: RecurrentConfig, seed: int = 0):
        super().__init__(agent_id, obs_dim, n_actions, config, seed)
        self.nets = RecurrentI2QNetworks(obs_dim, n_actions, config.gru_hidden, config.hidden)
        self.opt_main = torch.optim.Adam(
            [
                {"params": self.nets.encoder.parameters(), "lr": config.lr_q},
                {"params": self.nets.q_ss.parameters(), "lr": config.lr_qss},
                {"params": self.nets.q.parameters(), "lr": config.lr_q},
            ]
        )
        self.opt_f = torch.optim.Adam(self.nets.f.parameters(), lr=config.lr_f)

    def _optimizers(self):
        return {"opt_main": self.opt_main, "opt_f": self.opt_f}

    def update(self) -> dict[str, float]:
        return rec_i2q_update(
            self.nets, (self.opt_main, self.opt_f), self.sample_episodes(), self.config.gamma, self.config.lam
        )

    def update_targets(self) -> None:
        soft_update(self.nets.q_ss_target, self.nets.q_ss, self.config.tau)
        soft_update(self.nets.q_target, self.nets.q, self.config.tau)


class RecHystIQLAgent(_RecurrentAgent):
    algorithm = "rec_hyst_iql"

    def __init__(self, agent_id, obs_dim, n_actions, config: RecurrentConfig, seed: int = 0):
        super().__init__(agent_id, obs_dim, n_actions, config, seed)
        self.rates = HystereticRates(config.alpha, config.beta)
        self.nets = RecurrentQNetworks(obs_dim, n_actions, config.gru_hidden, config.hidden)
        self.opt = torch.optim.Adam(
            list(self.nets.encoder.parameters()) + list(self.nets.q.parameters()), lr=config.lr_q
        )

    def _optimizers(self):
        return {"opt": self.opt}

    def update(self) -> dict[str, float]:
        batch = EpisodeBatch.from_episodes(self.sample_episodes())
        loss = hysteretic_loss(self.nets, batch, self.rates, self.config.gamma)
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        return {"q": loss.item()}

    def update_targets(self) -> None:
        soft_update(self.nets.encoder_target, self.nets.encoder, self.config.tau)
        soft_update(self.nets.q_target, self.nets.q, self.config.tau)
