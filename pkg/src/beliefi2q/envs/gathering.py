"""Gathering: collect scattered treasures under a shared, radius-limited view."""

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
    sample_cells,
    visibility_mask,
)

EMPTY, TREASURE, AGENT = 0.0, 1.0, 2.0


@dataclass(frozen=True)
class GatheringConfig:
    grid_size: int = 10
    n_agents: int = 2
    n_treasures: int = 5
    visibility_radius: int = 2
    step_penalty: float = 0.01
    treasure_reward: float = 1.0
    max_steps: int = 100


class GatheringEnv(DecPOMDP):
    """State: grid codes (G*G, empty/treasure/agent) then agent positions (2N).

    The observation is the same grid with every cell outside all agents'
    visibility disks replaced by ``UNSEEN``, followed by agent positions.
    """

    name = "gathering"
    n_actions = len(MOVES_4)

    def __init__(self, config: GatheringConfig | None = None) -> None:
        super().__init__()
        self.config = cfg = config or GatheringConfig()
        cells = cfg.grid_size * cfg.grid_size
        if cfg.grid_size < 2 or cfg.n_agents < 1 or cfg.n_treasures < 1 or cfg.visibility_radius < 1:
            raise ConfigError(f"invalid gathering config: {cfg}")
        if cfg.n_agents + cfg.n_treasures > cells:
            raise ConfigError("grid cannot fit agents and treasures")
        self.n_agents = cfg.n_agents
        self.max_steps = cfg.max_steps
        self.state_dim = cells + 2 * cfg.n_agents
        self.obs_dims = (self.state_dim,) * cfg.n_agents
        self.hidden_dim = cells

    def config_dict(self) -> dict:
        return asdict(self.config)

    def _split(self, vec):
        g = self.config.grid_size
        grid = np.asarray(vec[: g * g]).reshape(g, g)
        pos = decode_positions(vec[g * g :], g)
        return grid == TREASURE, pos

    def _pack(self, treasures, pos):
        g = self.config.grid_size
        grid = np.where(treasures, TREASURE, EMPTY).astype(FLOAT)
        grid[pos[:, 0], pos[:, 1]] = AGENT
        return np.concatenate([grid.ravel(), encode_positions(pos, g)])

    def _initial_state(self, rng):
        cfg = self.config
        pos = sample_cells(rng, cfg.grid_size, cfg.n_agents)
        cells = sample_cells(rng, cfg.grid_size, cfg.n_treasures, exclude=pos)
        treasures = np.zeros((cfg.grid_size, cfg.grid_size), dtype=bool)
        treasures[cells[:, 0], cells[:, 1]] = True
        return self._pack(treasures, pos)

    def _transition(self, state, actions, step_index):
        cfg = self.config
        treasures, pos = self._split(state)
        new = apply_moves(pos, actions, MOVES_4, cfg.grid_size)
        hit = np.zeros_like(treasures)
        hit[new[:, 0], new[:, 1]] = True
        collected = int((hit & treasures).sum())
        treasures = treasures & ~hit
        reward = collected * cfg.treasure_reward - cfg.step_penalty
        return self._pack(treasures, new), reward, not treasures.any()

    def visible_mask(self, state: EnvState) -> np.ndarray:
        _, pos = self._split(state.feature_vector)
        return visibility_mask(pos, self.config.grid_size, self.config.visibility_radius)

    def observe(self, state: EnvState) -> list[Observation]:
        g = self.config.grid_size
        vec = state.feature_vector
        grid = np.where(self.visible_mask(state).ravel(), vec[: g * g], UNSEEN).astype(FLOAT)
        obs = np.concatenate([grid, vec[g * g :]]).astype(FLOAT)
        return [Observation(obs.copy(), i) for i in range(self.n_agents)]

    def hidden_features(self, state) -> np.ndarray:
        vec = state.feature_vector if isinstance(state, EnvState) else np.asarray(state)
        g = self.config.grid_size
        return (vec[..., : g * g] == TREASURE).astype(FLOAT)
