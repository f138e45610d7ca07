"""Coordinated HoneyComb: ten agents on a hex field, two of them informed.

Hex cells use axial coordinates ``(q, r)`` with ``|q|, |r|, |q + r| <= radius``.
An agent that reaches one of the six corner reward fields stays there. The
payout happens once, when the episode ends: every settled agent receives its
field's reward times ``group_bonus_factor ** (k - 1)`` where ``k`` agents share
the field, and the joint reward is the sum over agents.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import FLOAT, ConfigError, DecPOMDP, EnvState, Observation
from ._grid import UNSEEN

HEX_DIRECTIONS = ((1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1))
HEX_MOVES = ((0, 0),) + HEX_DIRECTIONS


@dataclass(frozen=True)
class HoneycombConfig:
    radius: int = 5
    n_agents: int = 10
    n_informed: int = 2
    n_high: int = 2
    base_reward: float = 1.0
    high_reward: float = 2.0
    group_bonus_factor: float = 1.5
    max_steps: int = 25


class HoneycombEnv(DecPOMDP):
    """State: agent positions (2N) then high-reward field coordinates (2 * n_high).

    Agent ``i``'s observation: own position (2), all positions (2N), the six
    field coordinates (12), then the high-reward coordinates for informed
    agents (indices ``< n_informed``) or ``UNSEEN`` for everyone else.
    """

    name = "honeycomb"
    n_actions = len(HEX_MOVES)
    shared_observation = False

    def __init__(self, config: HoneycombConfig | None = None) -> None:
        super().__init__()
        self.config = cfg = config or HoneycombConfig()
        if cfg.radius < 1 or cfg.n_agents < 1 or not 0 <= cfg.n_informed <= cfg.n_agents:
            raise ConfigError(f"invalid honeycomb config: {cfg}")
        if not 1 <= cfg.n_high <= 6:
            raise ConfigError("n_high must be between 1 and 6")
        if cfg.high_reward <= cfg.base_reward or cfg.group_bonus_factor <= 1.0:
            raise ConfigError("need high_reward > base_reward and group_bonus_factor > 1")
        self.n_agents = cfg.n_agents
        self.max_steps = cfg.max_steps
        self.fields = np.array(HEX_DIRECTIONS, dtype=np.int64) * cfg.radius
        self.state_dim = 2 * cfg.n_agents + 2 * cfg.n_high
        self.obs_dims = (2 + 2 * cfg.n_agents + 12 + 2 * cfg.n_high,) * cfg.n_agents
        self.hidden_dim = 2 * cfg.n_high

    def config_dict(self) -> dict:
        return asdict(self.config)

    def informed(self, agent_id: int) -> bool:
        return agent_id < self.config.n_informed

    def _enc(self, cells) -> np.ndarray:
        r = self.config.radius
        return ((np.asarray(cells, dtype=np.float64) + r) / (2 * r)).astype(FLOAT).ravel()

    def _dec(self, vec) -> np.ndarray:
        r = self.config.radius
        return np.rint(np.asarray(vec, dtype=np.float64).reshape(-1, 2) * 2 * r - r).astype(np.int64)

    def _split(self, vec):
        n = self.n_agents
        return self._dec(vec[: 2 * n]), self._dec(vec[2 * n :])

    def in_field(self, cell) -> bool:
        q, r = int(cell[0]), int(cell[1])
        rad = self.config.radius
        return abs(q) <= rad and abs(r) <= rad and abs(q + r) <= rad

    def field_index(self, cell) -> int:
        hits = np.flatnonzero((self.fields == np.asarray(cell)).all(axis=1))
        return int(hits[0]) if len(hits) else -1

    def _initial_state(self, rng):
        cfg = self.config
        high = np.sort(rng.choice(6, size=cfg.n_high, replace=False))
        pos = np.zeros((cfg.n_agents, 2), dtype=np.int64)
        return np.concatenate([self._enc(pos), self._enc(self.fields[high])])

    def payout(self, pos: np.ndarray, high: np.ndarray) -> float:
        cfg = self.config
        idx = [self.field_index(p) for p in pos]
        high_idx = {self.field_index(h) for h in high}
        total = 0.0
        for f in set(idx) - {-1}:
            k = idx.count(f)
            base = cfg.high_reward if f in high_idx else cfg.base_reward
            total += k * base * cfg.group_bonus_factor ** (k - 1)
        return total

    def _transition(self, state, actions, step_index):
        pos, high = self._split(state)
        new = pos.copy()
        for i, a in enumerate(actions):
            if self.field_index(pos[i]) >= 0:
                continue
            cand = pos[i] + np.array(HEX_MOVES[a])
            if self.in_field(cand):
                new[i] = cand
        settled = all(self.field_index(p) >= 0 for p in new)
        ending = settled or step_index + 1 >= self.max_steps
        reward = self.payout(new, high) if ending else 0.0
        return np.concatenate([self._enc(new), self._enc(high)]), reward, settled

    def observe(self, state: EnvState) -> list[Observation]:
        n = self.n_agents
        vec = state.feature_vector
        positions = vec[: 2 * n]
        fields = self._enc(self.fields)
        hidden = vec[2 * n :]
        out = []
        for i in range(n):
            slot = hidden if self.informed(i) else np.full_like(hidden, UNSEEN)
            obs = np.concatenate([positions[2 * i : 2 * i + 2], positions, fields, slot])
            out.append(Observation(obs.astype(FLOAT), i))
        return out

    def hidden_features(self, state) -> np.ndarray:
        vec = state.feature_vector if isinstance(state, EnvState) else np.asarray(state)
        return np.asarray(vec[..., 2 * self.n_agents :], dtype=FLOAT)
