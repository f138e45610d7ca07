"""Multi-agent Oracle: find the one rewarding treasure after querying an oracle."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import FLOAT, ConfigError, DecPOMDP, EnvState, Observation
from ._grid import MOVES_8, UNSEEN, apply_moves, decode_positions, encode_positions, sample_cells


@dataclass(frozen=True)
class OracleConfig:
    grid_size: int = 7
    n_agents: int = 2
    step_penalty: float = 0.01
    treasure_reward: float = 1.0
    reveal_duration: int = 1
    random_start: bool = False
    max_steps: int = 40


class OracleEnv(DecPOMDP):
    """Three treasure corners, one oracle corner; agents share one observation.

    State layout: agent positions (2N), correct treasure (2), reveal timer (1).
    Observation layout: agent positions (2N), revealed treasure or sentinel (2).
    """

    name = "oracle"
    n_actions = len(MOVES_8)

    def __init__(self, config: OracleConfig | None = None) -> None:
        super().__init__()
        self.config = cfg = config or OracleConfig()
        if cfg.grid_size < 4 or cfg.n_agents < 1 or cfg.reveal_duration < 1 or cfg.max_steps < 1:
            raise ConfigError(f"invalid oracle config: {cfg}")
        if cfg.step_penalty < 0 or cfg.treasure_reward <= 0:
            raise ConfigError("oracle rewards must satisfy step_penalty >= 0, treasure_reward > 0")
        g = cfg.grid_size - 1
        self.n_agents = cfg.n_agents
        self.max_steps = cfg.max_steps
        self.oracle_cell = np.array([g, g])
        self.treasure_cells = np.array([[0, 0], [g, 0], [0, g]])
        self.state_dim = 2 * cfg.n_agents + 3
        self.obs_dims = (2 * cfg.n_agents + 2,) * cfg.n_agents
        self.hidden_dim = 2

    def config_dict(self) -> dict:
        return asdict(self.config)

    def _split(self, vec: np.ndarray):
        n = self.n_agents
        pos = decode_positions(vec[: 2 * n], self.config.grid_size)
        treasure = decode_positions(vec[2 * n : 2 * n + 2], self.config.grid_size)[0]
        return pos, treasure, int(round(float(vec[2 * n + 2])))

    def _pack(self, pos, treasure, timer) -> np.ndarray:
        g = self.config.grid_size
        return np.concatenate(
            [encode_positions(pos, g), encode_positions(treasure, g), np.array([timer], dtype=FLOAT)]
        )

    def correct_treasure_index(self, state: EnvState | np.ndarray) -> int:
        vec = state.feature_vector if isinstance(state, EnvState) else state
        _, treasure, _ = self._split(vec)
        return int(np.flatnonzero((self.treasure_cells == treasure).all(axis=1))[0])

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        cfg = self.config
        correct = self.treasure_cells[rng.integers(0, 3)]
        if cfg.random_start:
            corners = np.vstack([self.treasure_cells, self.oracle_cell])
            pos = sample_cells(rng, cfg.grid_size, cfg.n_agents, exclude=corners)
        else:
            c = (cfg.grid_size - 1) // 2
            pos = np.full((cfg.n_agents, 2), c, dtype=np.int64)
        return self._pack(pos, correct, 0)

    def _transition(self, state, actions, step_index):
        cfg = self.config
        pos, treasure, timer = self._split(state)
        timer = max(timer - 1, 0)
        new = apply_moves(pos, actions, MOVES_8, cfg.grid_size)
        was_on = (pos == self.oracle_cell).all(axis=1)
        now_on = (new == self.oracle_cell).all(axis=1)
        if (now_on & ~was_on).any():
            timer = cfg.reveal_duration
        reward = -cfg.step_penalty
        terminated = bool((new == treasure).all(axis=1).any())
        if terminated:
            reward += cfg.treasure_reward
        return self._pack(new, treasure, timer), reward, terminated

    def observe(self, state: EnvState) -> list[Observation]:
        n = self.n_agents
        vec = state.feature_vector
        _, _, timer = self._split(vec)
        slot = vec[2 * n : 2 * n + 2] if timer > 0 else np.full(2, UNSEEN, dtype=FLOAT)
        obs = np.concatenate([vec[: 2 * n], slot]).astype(FLOAT)
        return [Observation(obs.copy(), i) for i in range(n)]

    def hidden_features(self, state) -> np.ndarray:
        vec = state.feature_vector if isinstance(state, EnvState) else np.asarray(state)
        n = self.n_agents
        return np.asarray(vec[..., 2 * n : 2 * n + 2], dtype=FLOAT)

    def treasure_coords(self) -> np.ndarray:
        """Normalized coordinates of the three treasure corners, shape (3, 2)."""
        return (self.treasure_cells / (self.config.grid_size - 1)).astype(FLOAT)
