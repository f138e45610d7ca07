"""Belief-I2Q: decentralized I2Q learning on observations plus belief states.

Each agent owns a state-state critic ``q_ss(o, o')``, a transition model
``f(g, a)`` proposing the next observation, and an action-value network
``q(g)`` over encodings ``g = [o, b(h)]``. Nothing in here can reach another
agent's buffer or networks; the frozen belief model is the only shared object.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from .belief import BeliefModel, sample_belief
from .core import UsageError
from .data import LocalEpisode, ReplayBuffer
from .nets import PairCritic, QNetwork, TransitionModel, detached_params, freeze, soft_update


@dataclass
class I2QConfig:
    gamma: float = 0.99
    lam: float = 0.1
    lr_q: float = 1e-3
    lr_qss: float = 1e-3
    lr_f: float = 1e-3
    hidden: tuple[int, ...] = (128, 128, 128)
    tau: float = 0.005
    m_samples: int = 10
    batch_episodes: int = 32
    buffer_capacity: int = 10_000


def encode_joint(observation, belief, dims: tuple[int, int] | None = None):
    """``g = [o, b]``; works on numpy arrays and tensors alike."""
    if dims is not None and (observation.shape[-1], belief.shape[-1]) != tuple(dims):
        raise UsageError(
            f"encoding dims {(observation.shape[-1], belief.shape[-1])} != expected {tuple(dims)}"
        )
    if isinstance(observation, torch.Tensor):
        return torch.cat([observation, belief.to(observation.dtype)], dim=-1)
    return np.concatenate([observation, np.asarray(belief, dtype=observation.dtype)], axis=-1)


class AgentNetworks(nn.Module):
    def __init__(self, obs_dim: int, belief_dim: int, n_actions: int, hidden: Sequence[int] = (128, 128, 128)):
        super().__init__()
        self.obs_dim, self.belief_dim, self.n_actions = obs_dim, belief_dim, n_actions
        g_dim = obs_dim + belief_dim
        self.q_ss = PairCritic(obs_dim, hidden)
        self.f = TransitionModel(g_dim, n_actions, obs_dim, hidden)
        self.q = QNetwork(g_dim, n_actions, hidden)
        self.q_ss_target = freeze(copy.deepcopy(self.q_ss))
        self.q_target = freeze(copy.deepcopy(self.q))


@dataclass
class I2QBatch:
    obs: torch.Tensor
    actions: torch.Tensor
    rewards: torch.Tensor
    next_obs: torch.Tensor
    dones: torch.Tensor
    g: torch.Tensor
    g_next: torch.Tensor
    # belief of the history extended by (predicted next obs, action); None disables beliefs
    extend: Callable[[torch.Tensor, torch.Tensor], torch.Tensor] | None = None


def qss_loss(nets, batch: I2QBatch, gamma: float) -> torch.Tensor:
    with torch.no_grad():
        a_star = nets.q(batch.g_next).argmax(-1)
        proposal = nets.f(batch.g_next, a_star)
        boot = nets.q_ss_target(batch.next_obs, proposal)
        target = batch.rewards + gamma * (1.0 - batch.dones) * boot
    pred = nets.q_ss(batch.obs, batch.next_obs)
    return (pred - target).pow(2).mean()


def f_loss(nets, batch: I2QBatch, lam: float) -> torch.Tensor:
    """Negated transition objective; the critic is read with detached weights."""
    if lam <= 0:
        raise UsageError("lambda must be positive")
    pred = nets.f(batch.g, batch.actions)
    value = functional_call(nets.q_ss, detached_params(nets.q_ss), (batch.obs, pred))
    err = (pred - batch.next_obs).pow(2).sum(-1)
    return -(lam * value - err).mean()


def q_loss(nets, batch: I2QBatch, gamma: float) -> torch.Tensor:
    with torch.no_grad():
        proposal = nets.f(batch.g, batch.actions)
        if batch.extend is not None:
            g_next = encode_joint(proposal, batch.extend(proposal, batch.actions))
        else:
            g_next = proposal
        boot = nets.q_target(g_next).max(-1).values
        target = batch.rewards + gamma * (1.0 - batch.dones) * boot
    q_sa = nets.q(batch.g).gather(-1, batch.actions.long()[:, None]).squeeze(-1)
    return (q_sa - target).pow(2).mean()


def epsilon_greedy(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform action with probability epsilon, else the first maximiser."""
    if not 0.0 <= epsilon <= 1.0:
        raise UsageError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def select_action(nets, encoding, epsilon: float, rng: np.random.Generator) -> int:
    with torch.no_grad():
        q = nets.q(torch.as_tensor(encoding, dtype=torch.float32)[None])[0].numpy()
    return epsilon_greedy(q, epsilon, rng)


class BeliefI2QAgent:
    """One decentralized learner: local buffer, local networks, frozen belief model."""

    algorithm = "belief_i2q"

    def __init__(
        self,
        agent_id: int,
        obs_dim: int,
        n_actions: int,
        config: I2QConfig,
        belief_model: BeliefModel | None = None,
        seed: int = 0,
    ) -> None:
        self.agent_id = agent_id
        self.config = config
        self.belief = belief_model
        self.n_actions = n_actions
        belief_dim = belief_model.belief_dim if belief_model is not None else 0
        self.nets = AgentNetworks(obs_dim, belief_dim, n_actions, config.hidden)
        self.opt_qss = torch.optim.Adam(self.nets.q_ss.parameters(), lr=config.lr_qss)
        self.opt_f = torch.optim.Adam(self.nets.f.parameters(), lr=config.lr_f)
        self.opt_q = torch.optim.Adam(self.nets.q.parameters(), lr=config.lr_q)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.rng = np.random.default_rng([seed, agent_id, 1])
        self.gen = torch.Generator().manual_seed(seed * 10_007 + agent_id)
        self._obs: list[np.ndarray] = []

    # -- acting -----------------------------------------------------------
    def _belief(self, hidden: torch.Tensor) -> torch.Tensor:
        return sample_belief(self.belief, hidden, self.config.m_samples, self.gen)

    def begin_episode(self, obs: np.ndarray) -> None:
        self._obs, self._acts, self._rews, self._hs = [np.asarray(obs)], [], [], []
        if self.belief is not None:
            with torch.no_grad():
                h = self.belief.step(self.belief.initial_hidden(1), torch.as_tensor(obs)[None], None)
            self._hs.append(h[0].numpy())

    def encoding(self) -> np.ndarray:
        obs = self._obs[-1]
        if self.belief is None:
            return obs
        b = self._belief(torch.as_tensor(self._hs[-1])[None])[0].numpy()
        return encode_joint(obs, b)

    def act(self, epsilon: float) -> int:
        return select_action(self.nets, self.encoding(), epsilon, self.rng)

    def record(self, action: int, reward: float, next_obs: np.ndarray) -> None:
        self._acts.append(int(action))
        self._rews.append(float(reward))
        self._obs.append(np.asarray(next_obs))
        if self.belief is not None:
            with torch.no_grad():
                h = self.belief.step(
                    torch.as_tensor(self._hs[-1])[None],
                    torch.as_tensor(next_obs)[None],
                    torch.tensor([int(action)]),
                )
            self._hs.append(h[0].numpy())

    def end_episode(self, terminated: bool) -> LocalEpisode:
        ep = LocalEpisode(
            observations=np.stack(self._obs),
            actions=np.asarray(self._acts, dtype=np.int64),
            rewards=np.asarray(self._rews, dtype=np.float32),
            terminated=terminated,
        )
        if self.belief is not None:
            ep.cache["hidden"] = np.stack(self._hs)
        self.buffer.push(ep)
        return ep

    # -- learning ---------------------------------------------------------
    def sample_batch(self) -> I2QBatch:
        n = max(1, int(round(self.config.batch_episodes * self.buffer.mean_length())))
        tb = self.buffer.sample("transitions", n, self.rng)
        obs = torch.as_tensor(tb.obs)
        next_obs = torch.as_tensor(tb.next_obs)
        actions = torch.as_tensor(tb.actions)
        extend = None
        if self.belief is not None:
            h = torch.as_tensor(np.stack([e.cache["hidden"][t] for e, t in zip(tb.episodes, tb.steps)]))
            h_next = torch.as_tensor(np.stack([e.cache["hidden"][t + 1] for e, t in zip(tb.episodes, tb.steps)]))
            g = encode_joint(obs, self._belief(h))
            g_next = encode_joint(next_obs, self._belief(h_next))
            model = self.belief

            def extend(proposal, acts, h=h):
                with torch.no_grad():
                    return self._belief(model.step(h, proposal, acts))

        else:
            g, g_next = obs, next_obs
        return I2QBatch(
            obs=obs,
            actions=actions,
            rewards=torch.as_tensor(tb.rewards, dtype=torch.float32),
            next_obs=next_obs,
            dones=torch.as_tensor(tb.dones, dtype=torch.float32),
            g=g,
            g_next=g_next,
            extend=extend,
        )

    def update(self) -> dict[str, float]:
        batch = self.sample_batch()
        cfg = self.config
        out = {}
        for name, opt, fn, arg in (
            ("qss", self.opt_qss, qss_loss, cfg.gamma),
            ("f", self.opt_f, f_loss, cfg.lam),
            ("q", self.opt_q, q_loss, cfg.gamma),
        ):
            loss = fn(self.nets, batch, arg)
            opt.zero_grad()
            loss.backward()
            opt.step()
            out[name] = loss.item()
        return out

    def update_targets(self) -> None:
        soft_update(self.nets.q_ss_target, self.nets.q_ss, self.config.tau)
        soft_update(self.nets.q_target, self.nets.q, self.config.tau)

    def state_dict(self) -> dict:
        return {
            "nets": self.nets.state_dict(),
            "opt_qss": self.opt_qss.state_dict(),
            "opt_f": self.opt_f.state_dict(),
            "opt_q": self.opt_q.state_dict(),
        }

    def load_state_dict(self, state: dict) -> None:
        self.nets.load_state_dict(state["nets"])
        self.opt_qss.load_state_dict(state["opt_qss"])
        self.opt_f.load_state_dict(state["opt_f"])
        self.opt_q.load_state_dict(state["opt_q"])
