"""Dec-POMDP primitives shared by every environment and learner."""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FLOAT = np.float32


class UsageError(RuntimeError):
    """Raised when an API is called out of contract (bad state, bad argument)."""


class ConfigError(ValueError):
    """Raised for invalid environment or experiment configuration."""


@dataclass(frozen=True)
class EnvState:
    feature_vector: np.ndarray
    step_index: int = 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnvState):
            return NotImplemented
        return self.step_index == other.step_index and np.array_equal(
            self.feature_vector, other.feature_vector
        )


@dataclass(frozen=True)
class Observation:
    feature_vector: np.ndarray
    agent_id: int

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Observation):
            return NotImplemented
        return self.agent_id == other.agent_id and np.array_equal(
            self.feature_vector, other.feature_vector
        )


@dataclass(frozen=True)
class JointAction:
    actions: tuple[int, ...]

    @classmethod
    def of(cls, actions: Sequence[int]) -> "JointAction":
        return cls(tuple(int(a) for a in actions))

    def validate(self, n_agents: int, n_actions: int) -> None:
        if len(self.actions) != n_agents:
            raise UsageError(f"expected {n_agents} actions, got {len(self.actions)}")
        for a in self.actions:
            if not 0 <= a < n_actions:
                raise UsageError(f"action {a} outside [0, {n_actions})")


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    next_observations: list[Observation]
    reward: float
    terminated: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


@dataclass(frozen=True)
class DiscountedReturn:
    value: float
    gamma: float

    @classmethod
    def from_rewards(cls, rewards: Sequence[float], gamma: float) -> "DiscountedReturn":
        if not 0.0 < gamma <= 1.0:
            raise UsageError("gamma must lie in (0, 1]")
        g = 0.0
        for r in reversed(list(rewards)):
            g = float(r) + gamma * g
        return cls(g, gamma)


@dataclass
class _Episode:
    state: EnvState | None = None
    finished: bool = True
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


class DecPOMDP(abc.ABC):
    """Deterministic cooperative Dec-POMDP over flat float32 feature vectors.

    Subclasses implement ``_initial_state``, ``_transition`` and ``observe``;
    this base class owns seeding, step counting and the episode cap.
    """

    name: str = "abstract"
    n_agents: int
    n_actions: int
    max_steps: int
    state_dim: int
    obs_dims: tuple[int, ...]
    hidden_dim: int
    # True when every agent receives the same observation vector.
    shared_observation: bool = True

    def __init__(self) -> None:
        self._ep = _Episode()

    # -- to implement ---------------------------------------------------
    @abc.abstractmethod
    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        ...

    @abc.abstractmethod
    def _transition(
        self, state: np.ndarray, actions: tuple[int, ...], step_index: int
    ) -> tuple[np.ndarray, float, bool]:
        """Return (next feature vector, joint reward, terminated).

        ``step_index`` is the index of ``state``; the produced state has index
        ``step_index + 1``.
        """

    @abc.abstractmethod
    def observe(self, state: EnvState) -> list[Observation]:
        ...

    @abc.abstractmethod
    def hidden_features(self, state: EnvState | np.ndarray) -> np.ndarray:
        """Unobserved state features the belief model is trained to predict."""

    def config_dict(self) -> dict:
        return {}

    # -- public API -----------------------------------------------------
    @property
    def state(self) -> EnvState | None:
        return self._ep.state

    def reset(self, seed: int) -> tuple[EnvState, list[Observation]]:
        if seed < 0:
            raise UsageError("seed must be non-negative")
        rng = np.random.default_rng(seed)
        vec = np.asarray(self._initial_state(rng), dtype=FLOAT)
        state = EnvState(vec, 0)
        self._ep = _Episode(state=state, finished=False, rng=rng)
        return state, self.observe(state)

    def set_state(self, state: EnvState) -> list[Observation]:
        """Resume an episode from ``state`` (scripted scenarios, replays)."""
        vec = np.asarray(state.feature_vector, dtype=FLOAT)
        if vec.shape != (self.state_dim,):
            raise UsageError(f"state must have {self.state_dim} features")
        self._ep.state = EnvState(vec, int(state.step_index))
        self._ep.finished = state.step_index >= self.max_steps
        return self.observe(self._ep.state)

    def step(self, joint_action: JointAction | Sequence[int]) -> StepResult:
        if self._ep.state is None or self._ep.finished:
            raise UsageError("step() called on a finished or un-reset episode")
        if not isinstance(joint_action, JointAction):
            joint_action = JointAction.of(joint_action)
        joint_action.validate(self.n_agents, self.n_actions)
        cur = self._ep.state
        vec, reward, terminated = self._transition(
            cur.feature_vector, joint_action.actions, cur.step_index
        )
        nxt = EnvState(np.asarray(vec, dtype=FLOAT), cur.step_index + 1)
        truncated = (not terminated) and nxt.step_index >= self.max_steps
        self._ep.state = nxt
        self._ep.finished = terminated or truncated
        return StepResult(nxt, self.observe(nxt), float(reward), bool(terminated), bool(truncated))

    def sample_actions(self, rng: np.random.Generator) -> JointAction:
        return JointAction.of(rng.integers(0, self.n_actions, size=self.n_agents))
