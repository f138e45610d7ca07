"""Escape room: jointly collect every key, then unlock the exit."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import FLOAT, ConfigError, DecPOMDP, EnvState, Observation
from ._grid import (
    MOVES_4,
    UNSEEN,
    apply_moves,
    decode_positions,
    encode_positions,
    resolve_collisions,
    sample_cells,
    visibility_mask,
)

EMPTY, KEY, EXIT = 0.0, 1.0, 2.0


@dataclass(frozen=True)
class EscapeConfig:
    grid_size: int = 10
    n_agents: int = 2
    n_keys: int = 2
    visibility_radius: int = 2
    step_penalty: float = 0.01
    collision_penalty: float = 0.1
    exit_reward: float = 1.0
    max_steps: int = 100


class EscapeEnv(DecPOMDP):
    """State: item codes (G*G), revealed mask (G*G), positions (2N), keys held (1).

    Observation: item codes with unrevealed cells set to ``UNSEEN``, positions,
    and the fraction of keys the team holds.
    """

    name = "escape"
    n_actions = len(MOVES_4)

    def __init__(self, config: EscapeConfig | None = None) -> None:
        super().__init__()
        self.config = cfg = config or EscapeConfig()
        cells = cfg.grid_size * cfg.grid_size
        if cfg.grid_size < 2 or cfg.n_agents < 1 or cfg.n_keys < 1 or cfg.visibility_radius < 1:
            raise ConfigError(f"invalid escape config: {cfg}")
        if cfg.n_agents + cfg.n_keys + 1 > cells:
            raise ConfigError("grid cannot fit agents, keys and exit")
        self.n_agents = cfg.n_agents
        self.max_steps = cfg.max_steps
        self.state_dim = 2 * cells + 2 * cfg.n_agents + 1
        self.obs_dims = (cells + 2 * cfg.n_agents + 1,) * cfg.n_agents
        self.hidden_dim = cells

    def config_dict(self) -> dict:
        return asdict(self.config)

    def _split(self, vec):
        g = self.config.grid_size
        c = g * g
        items = np.asarray(vec[:c]).reshape(g, g).copy()
        revealed = np.asarray(vec[c : 2 * c]).reshape(g, g) > 0.5
        pos = decode_positions(vec[2 * c : 2 * c + 2 * self.n_agents], g)
        keys_held = int(round(float(vec[-1])))
        return items, revealed, pos, keys_held

    def _pack(self, items, revealed, pos, keys_held):
        g = self.config.grid_size
        return np.concatenate(
            [
                items.astype(FLOAT).ravel(),
                revealed.astype(FLOAT).ravel(),
                encode_positions(pos, g),
                np.array([keys_held], dtype=FLOAT),
            ]
        )

    def _initial_state(self, rng):
        cfg = self.config
        g = cfg.grid_size
        pos = sample_cells(rng, g, cfg.n_agents)
        cells = sample_cells(rng, g, cfg.n_keys + 1, exclude=pos)
        items = np.zeros((g, g))
        items[cells[:-1, 0], cells[:-1, 1]] = KEY
        items[cells[-1, 0], cells[-1, 1]] = EXIT
        revealed = visibility_mask(pos, g, cfg.visibility_radius)
        return self._pack(items, revealed, pos, 0)

    def _transition(self, state, actions, step_index):
        cfg = self.config
        items, revealed, pos, keys_held = self._split(state)
        proposed = apply_moves(pos, actions, MOVES_4, cfg.grid_size)
        new, collisions = resolve_collisions(pos, proposed)
        reward = -cfg.step_penalty - collisions * cfg.collision_penalty
        for x, y in new:
            if items[x, y] == KEY:
                items[x, y] = EMPTY
                keys_held += 1
        on_exit = any(items[x, y] == EXIT for x, y in new)
        terminated = on_exit and keys_held >= cfg.n_keys
        if terminated:
            reward += cfg.exit_reward
        revealed = revealed | visibility_mask(new, cfg.grid_size, cfg.visibility_radius)
        return self._pack(items, revealed, new, keys_held), reward, terminated

    def revealed_mask(self, state: EnvState) -> np.ndarray:
        return self._split(state.feature_vector)[1]

    def keys_held(self, state: EnvState) -> int:
        return self._split(state.feature_vector)[3]

    def observe(self, state: EnvState) -> list[Observation]:
        g = self.config.grid_size
        c = g * g
        vec = state.feature_vector
        revealed = vec[c : 2 * c] > 0.5
        grid = np.where(revealed, vec[:c], UNSEEN)
        held = np.array([vec[-1] / self.config.n_keys])
        obs = np.concatenate([grid, vec[2 * c : 2 * c + 2 * self.n_agents], held]).astype(FLOAT)
        return [Observation(obs.copy(), i) for i in range(self.n_agents)]

    def hidden_features(self, state) -> np.ndarray:
        vec = state.feature_vector if isinstance(state, EnvState) else np.asarray(state)
        c = self.config.grid_size ** 2
        return np.asarray(vec[..., :c], dtype=FLOAT)
