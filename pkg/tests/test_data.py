import struct

import numpy as np
import pytest
from scipy import stats

from beliefi2q.core import UsageError
from beliefi2q.data import (
    DatasetError,
    LabeledDataset,
    LocalEpisode,
    ReplayBuffer,
    collect_random,
    load_dataset,
    save_dataset,
)
from beliefi2q.envs import make_env


@pytest.fixture(scope="module")
def oracle_ds():
    return collect_random(make_env("oracle", {"grid_size": 5}), 40, seed=3)


def _episode(length, obs_dim=3, offset=0.0, terminated=True):
    obs = np.arange((length + 1) * obs_dim, dtype=np.float32).reshape(length + 1, obs_dim) + offset
    return LocalEpisode(obs, np.arange(length) % 2, np.ones(length, np.float32), terminated)


def test_collect_records_state_every_step(oracle_ds):
    assert len(oracle_ds) == 40
    for ep in oracle_ds.episodes:
        assert ep.states.shape == (ep.length + 1, 7)
        assert ep.observations.shape == (ep.length + 1, 2, 6)
        assert ep.actions.shape == (ep.length, 2) and ep.rewards.shape == (ep.length,)
        assert np.all(np.isfinite(ep.states))


def test_collect_uniform_actions():
    env = make_env("gathering")
    ds = collect_random(env, 100, seed=0)
    acts = np.concatenate([ep.actions.ravel() for ep in ds.episodes])
    assert len(acts) >= 10_000
    counts = np.bincount(acts, minlength=env.n_actions)
    assert stats.chisquare(counts).pvalue > 0.01


def test_collect_deterministic_bytes(tmp_path):
    env = make_env("escape", {"grid_size": 5})
    a = save_dataset(collect_random(env, 5, seed=9), tmp_path / "a.bin")
    b = save_dataset(collect_random(env, 5, seed=9), tmp_path / "b.bin")
    assert a.read_bytes() == b.read_bytes()
    c = save_dataset(collect_random(env, 5, seed=10), tmp_path / "c.bin")
    assert a.read_bytes() != c.read_bytes()


def test_collect_rejects_zero_episodes():
    with pytest.raises(UsageError):
        collect_random(make_env("oracle"), 0, seed=0)


def test_round_trip_lossless(tmp_path, oracle_ds):
    path = save_dataset(oracle_ds, tmp_path / "ds.bin")
    back = load_dataset(path, expected_digest=oracle_ds.config_digest)
    assert back.env_name == "oracle" and back.env_config == oracle_ds.env_config
    assert back.config_digest == oracle_ds.config_digest
    assert len(back) == len(oracle_ds)
    assert all(a == b for a, b in zip(back.episodes, oracle_ds.episodes))
    assert all(a.states.tobytes() == b.states.tobytes() for a, b in zip(back.episodes, oracle_ds.episodes))


def test_empty_dataset_round_trips(tmp_path):
    ds = LabeledDataset([], "oracle", {"grid_size": 7})
    back = load_dataset(save_dataset(ds, tmp_path / "e.bin"))
    assert len(back) == 0 and back.config_digest == ds.config_digest


def test_wrong_digest_rejected(tmp_path, oracle_ds):
    path = save_dataset(oracle_ds, tmp_path / "ds.bin")
    other = make_env("oracle", {"grid_size": 6})
    from beliefi2q.data import config_digest

    with pytest.raises(DatasetError, match="digest"):
        load_dataset(path, expected_digest=config_digest(other.name, other.config_dict()))


def test_corrupt_and_truncated_files(tmp_path, oracle_ds):
    path = save_dataset(oracle_ds, tmp_path / "ds.bin")
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"
    flipped = raw.copy()
    flipped[-5] ^= 0xFF
    bad.write_bytes(bytes(flipped))
    with pytest.raises(DatasetError):
        load_dataset(bad)
    bad.write_bytes(bytes(raw[:-7]))
    with pytest.raises(DatasetError):
        load_dataset(bad)
    bad.write_bytes(bytes(raw) + b"\x00")
    with pytest.raises(DatasetError):
        load_dataset(bad)
    bad.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(DatasetError):
        load_dataset(bad)


def test_schema_version_mismatch(tmp_path, oracle_ds):
    path = save_dataset(oracle_ds, tmp_path / "ds.bin")
    raw = path.read_bytes()
    (n,) = struct.unpack("<I", raw[4:8])
    header = raw[8 : 8 + n].replace(b'"schema_version": 1', b'"schema_version": 9')
    assert header != raw[8 : 8 + n]
    bad = tmp_path / "v.bin"
    bad.write_bytes(raw[:4] + struct.pack("<I", len(header)) + header + raw[8 + n :])
    with pytest.raises(DatasetError, match="version"):
        load_dataset(bad)


def test_local_view_has_no_state(oracle_ds):
    view = oracle_ds.episodes[0].local_view(1)
    assert not hasattr(view, "states")
    assert np.array_equal(view.observations, oracle_ds.episodes[0].observations[:, 1])


# ---------------------------------------------------------------- replay buffer


def test_buffer_fifo_eviction():
    buf = ReplayBuffer(capacity=10_000)
    first = _episode(1, offset=-1.0)
    buf.push(first)
    for k in range(10_000):
        buf.push(_episode(1, offset=float(k)))
    assert len(buf) == 10_000
    assert all(buf[i] is not first for i in (0, -1))
    assert buf[0].observations[0, 0] == 0.0


def test_buffer_episode_sampling():
    buf = ReplayBuffer()
    for k in range(40):
        buf.push(_episode(3 + k % 4, offset=float(k)))
    batch = buf.sample("episodes", 32, np.random.default_rng(0))
    assert len(batch) == 32 and all(isinstance(e, LocalEpisode) for e in batch)
    assert all(e.observations.shape[0] == e.length + 1 for e in batch)


def test_buffer_transition_history_prefix():
    buf = ReplayBuffer()
    for k in range(10):
        buf.push(_episode(2 + k, offset=100.0 * k))
    tb = buf.sample("transitions", 200, np.random.default_rng(1))
    for k in range(len(tb)):
        h = tb.history(k)
        t = int(tb.steps[k])
        assert len(h.actions) == t and len(h.observations) == t + 1
        assert np.array_equal(h.observations[-1], tb.obs[k])
        assert np.array_equal(tb.episodes[k].observations[t + 1], tb.next_obs[k])
        assert tb.dones[k] == (t == tb.episodes[k].length - 1)


def test_buffer_transition_sampling_uniform():
    buf = ReplayBuffer()
    lengths = [1, 2, 3, 4]
    for L in lengths:
        buf.push(_episode(L))
    tb = buf.sample("transitions", 20_000, np.random.default_rng(2))
    ids = [(id(e), int(t)) for e, t in zip(tb.episodes, tb.steps)]
    _, counts = np.unique(np.array([hash(i) for i in ids]), return_counts=True)
    assert len(counts) == sum(lengths)
    assert stats.chisquare(counts).pvalue > 0.01


def test_buffer_episode_sampling_uniform():
    buf = ReplayBuffer()
    for k in range(8):
        buf.push(_episode(k + 1))
    batch = buf.sample("episodes", 16_000, np.random.default_rng(3))
    counts = np.bincount([e.length - 1 for e in batch], minlength=8)
    assert stats.chisquare(counts).pvalue > 0.01


def test_buffer_errors():
    buf = ReplayBuffer(capacity=5)
    with pytest.raises(UsageError):
        buf.sample("transitions", 1, np.random.default_rng(0))
    with pytest.raises(UsageError):
        buf.push(_episode(0))
    buf.push(_episode(2))
    with pytest.raises(UsageError):
        buf.sample("minibatch", 1, np.random.default_rng(0))
    with pytest.raises(UsageError):
        ReplayBuffer(capacity=0)
