"""State-labelled datasets for belief pre-training and per-agent replay buffers.

Dataset files are a single container: ``BQDS`` magic, u32 header length, a
JSON header (schema version, environment, config digest, dimensions), then one
record per episode. Each record is ``u32 byte length | u32 crc32 | payload``
where the payload is ``<IIQ`` (steps, terminated, seed) followed by
little-endian float32 arrays: states, observations, actions, rewards.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import FLOAT, DecPOMDP, UsageError

SCHEMA_VERSION = 1
_MAGIC = b"BQDS"
_F32 = np.dtype("<f4")


class DatasetError(RuntimeError):
    pass


def config_digest(env_name: str, env_config: dict[str, Any]) -> str:
    blob = json.dumps({"env": env_name, "config": env_config}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class LabeledEpisode:
    states: np.ndarray  # (T+1, S)
    observations: np.ndarray  # (T+1, N, O)
    actions: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T,)
    terminated: bool
    seed: int

    def __post_init__(self) -> None:
        t = len(self.actions)
        if not (len(self.states) == len(self.observations) == t + 1 and len(self.rewards) == t):
            raise DatasetError("inconsistent episode field lengths")

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def dones(self) -> np.ndarray:
        d = np.zeros(self.length, dtype=bool)
        if self.terminated and self.length:
            d[-1] = True
        return d

    def local_view(self, agent_id: int) -> "LocalEpisode":
        """Agent-local trajectory with the state labels stripped."""
        return LocalEpisode(
            observations=self.observations[:, agent_id].copy(),
            actions=self.actions[:, agent_id].copy(),
            rewards=self.rewards.copy(),
            terminated=self.terminated,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledEpisode):
            return NotImplemented
        return (
            self.terminated == other.terminated
            and self.seed == other.seed
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("states", "observations", "actions", "rewards")
            )
        )


@dataclass
class LabeledDataset:
    episodes: list[LabeledEpisode]
    env_name: str
    env_config: dict[str, Any]
    config_digest: str = ""

    def __post_init__(self) -> None:
        if not self.config_digest:
            self.config_digest = config_digest(self.env_name, self.env_config)

    def __len__(self) -> int:
        return len(self.episodes)

    def returns(self) -> np.ndarray:
        return episode_returns(self.episodes)


def collect_random(env: DecPOMDP, n_episodes: int, seed: int) -> LabeledDataset:
    """Roll out the uniform-random joint policy, recording the state every step."""
    if n_episodes < 1:
        raise UsageError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    episodes = []
    for ep_seed in rng.integers(0, 2**31 - 1, size=n_episodes):
        state, obs = env.reset(int(ep_seed))
        states = [state.feature_vector]
        observations = [np.stack([o.feature_vector for o in obs])]
        actions, rewards = [], []
        while True:
            joint = env.sample_actions(rng)
            res = env.step(joint)
            states.append(res.next_state.feature_vector)
            observations.append(np.stack([o.feature_vector for o in res.next_observations]))
            actions.append(joint.actions)
            rewards.append(res.reward)
            if res.done:
                break
        episodes.append(
            LabeledEpisode(
                states=np.stack(states).astype(FLOAT),
                observations=np.stack(observations).astype(FLOAT),
                actions=np.asarray(actions, dtype=np.int64),
                rewards=np.asarray(rewards, dtype=FLOAT),
                terminated=res.terminated,
                seed=int(ep_seed),
            )
        )
    return LabeledDataset(episodes, env.name, env.config_dict())


def _pack_episode(ep: LabeledEpisode) -> bytes:
    head = struct.pack("<IIQ", ep.length, int(ep.terminated), ep.seed)
    body = b"".join(
        np.ascontiguousarray(a, dtype=_F32).tobytes()
        for a in (ep.states, ep.observations, ep.actions, ep.rewards)
    )
    return head + body


def save_dataset(dataset: LabeledDataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    first = dataset.episodes[0] if dataset.episodes else None
    header = {
        "schema_version": SCHEMA_VERSION,
        "env": dataset.env_name,
        "env_config": dataset.env_config,
        "config_digest": dataset.config_digest,
        "n_episodes": len(dataset.episodes),
        "state_dim": int(first.states.shape[1]) if first else 0,
        "n_agents": int(first.observations.shape[1]) if first else 0,
        "obs_dim": int(first.observations.shape[2]) if first else 0,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(blob)) + blob)
        for ep in dataset.episodes:
            rec = _pack_episode(ep)
            fh.write(struct.pack("<II", len(rec), zlib.crc32(rec)))
            fh.write(rec)
    return path


def load_dataset(path: str | Path, expected_digest: str | None = None) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC or len(raw) < 8:
        raise DatasetError(f"{path}: not a dataset file")
    (n,) = struct.unpack_from("<I", raw, 4)
    try:
        header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: corrupt header") from exc
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(f"{path}: unsupported schema version {header.get('schema_version')}")
    digest = config_digest(header["env"], header["env_config"])
    if digest != header["config_digest"]:
        raise DatasetError(f"{path}: header digest does not match its environment config")
    if expected_digest is not None and expected_digest != digest:
        raise DatasetError(f"{path}: config digest {digest[:12]} != expected {expected_digest[:12]}")
    s_dim, n_agents, o_dim = header["state_dim"], header["n_agents"], header["obs_dim"]
    episodes = []
    off = 8 + n
    for _ in range(header["n_episodes"]):
        if off + 8 > len(raw):
            raise DatasetError(f"{path}: truncated file")
        size, crc = struct.unpack_from("<II", raw, off)
        rec = raw[off + 8 : off + 8 + size]
        off += 8 + size
        if len(rec) != size or zlib.crc32(rec) != crc:
            raise DatasetError(f"{path}: corrupt episode record")
        t, term, seed = struct.unpack_from("<IIQ", rec, 0)
        flat = np.frombuffer(rec, dtype=_F32, offset=16)
        sizes = [(t + 1) * s_dim, (t + 1) * n_agents * o_dim, t * n_agents, t]
        if flat.size != sum(sizes):
            raise DatasetError(f"{path}: episode record has wrong size")
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        episodes.append(
            LabeledEpisode(
                states=parts[0].reshape(t + 1, s_dim).astype(FLOAT),
                observations=parts[1].reshape(t + 1, n_agents, o_dim).astype(FLOAT),
                actions=parts[2].reshape(t, n_agents).astype(np.int64),
                rewards=parts[3].astype(FLOAT),
                terminated=bool(term),
                seed=int(seed),
            )
        )
    if off != len(raw):
        raise DatasetError(f"{path}: trailing bytes after last record")
    return LabeledDataset(episodes, header["env"], header["env_config"], digest)


# ---------------------------------------------------------------------------
# Stage-2 replay


@dataclass
class LocalEpisode:
    """One agent's view of an episode. Deliberately has no state field."""

    observations: np.ndarray  # (T+1, O)
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    terminated: bool
    # learner-owned derived data (e.g. cached recurrent hidden states)
    cache: dict[str, np.ndarray] = field(default_factory=dict, compare=False, repr=False)

    @property
    def length(self) -> int:
        return len(self.actions)

    def done(self, t: int) -> bool:
        return self.terminated and t == self.length - 1

    def history(self, t: int) -> "History":
        """History available when acting at step ``t``: o_0..o_t and a_0..a_{t-1}."""
        from .belief import History

        return History(self.observations[: t + 1], self.actions[:t])


@dataclass
class TransitionBatch:
    episodes: list[LocalEpisode]
    steps: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.steps)

    def history(self, k: int):
        """History prefix of the k-th transition, resolved by back-reference."""
        return self.episodes[k].history(int(self.steps[k]))


class ReplayBuffer:
    """FIFO ring of whole episodes with uniform episode or transition sampling."""

    def __init__(self, capacity: int = 10_000) -> None:
        if capacity < 1:
            raise UsageError("capacity must be >= 1")
        self.capacity = capacity
        self._episodes: deque[LocalEpisode] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._episodes)

    def __getitem__(self, i: int) -> LocalEpisode:
        return self._episodes[i]

    def push(self, episode: LocalEpisode) -> None:
        if episode.length < 1:
            raise UsageError("cannot store an empty episode")
        self._episodes.append(episode)

    def mean_length(self) -> float:
        return float(np.mean([ep.length for ep in self._episodes])) if self._episodes else 0.0

    def sample(self, mode: str, batch_size: int, rng: np.random.Generator):
        if not self._episodes:
            raise UsageError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if mode == "episodes":
            idx = rng.integers(0, len(self._episodes), size=batch_size)
            return [self._episodes[i] for i in idx]
        if mode == "transitions":
            return self._sample_transitions(batch_size, rng)
        raise UsageError(f"unknown sampling mode {mode!r}")

    def _sample_transitions(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        lengths = np.array([ep.length for ep in self._episodes])
        bounds = np.cumsum(lengths)
        flat = rng.integers(0, bounds[-1], size=batch_size)
        ep_idx = np.searchsorted(bounds, flat, side="right")
        steps = flat - (bounds[ep_idx] - lengths[ep_idx])
        eps = [self._episodes[i] for i in ep_idx]
        return TransitionBatch(
            episodes=eps,
            steps=steps,
            obs=np.stack([e.observations[t] for e, t in zip(eps, steps)]),
            actions=np.array([e.actions[t] for e, t in zip(eps, steps)], dtype=np.int64),
            rewards=np.array([e.rewards[t] for e, t in zip(eps, steps)], dtype=np.float64),
            next_obs=np.stack([e.observations[t + 1] for e, t in zip(eps, steps)]),
            dones=np.array([e.done(int(t)) for e, t in zip(eps, steps)], dtype=bool),
        )


def episode_returns(episodes: Sequence[LabeledEpisode]) -> np.ndarray:
    return np.array([float(np.sum(ep.rewards, dtype=np.float64)) for ep in episodes])
