import numpy as np
import pytest

from beliefi2q.core import DiscountedReturn, EnvState, JointAction, UsageError
from beliefi2q.envs import ENV_NAMES, make_env

# index of the decoded agent positions in each env's ``_split`` output
POSITION_SLOT = {"oracle": 0, "gathering": 1, "escape": 2, "honeycomb": 0}


@pytest.mark.parametrize("name", ENV_NAMES)
def test_reset_is_pure_function_of_seed(name):
    env = make_env(name)
    s1, o1 = env.reset(7)
    s2, o2 = env.reset(7)
    assert s1 == s2 and s1.step_index == 0
    assert all(a == b for a, b in zip(o1, o2))
    assert all(a == b for a, b in zip(o1, env.observe(s1)))
    assert s1.feature_vector.shape == (env.state_dim,)
    for i, o in enumerate(o1):
        assert o.agent_id == i and o.feature_vector.shape == (env.obs_dims[i],)


@pytest.mark.parametrize("name", ENV_NAMES)
def test_replay_determinism_and_cooperative_reward(name):
    env = make_env(name)
    rng = np.random.default_rng(0)
    actions = [env.sample_actions(rng) for _ in range(env.max_steps)]

    def rollout():
        env.reset(3)
        out = []
        for a in actions:
            res = env.step(a)
            out.append((res.next_state.feature_vector.copy(), res.reward, res.terminated, res.truncated))
            assert isinstance(res.reward, float)  # one joint scalar for everyone
            if res.done:
                break
        return out

    first, second = rollout(), rollout()
    assert len(first) == len(second)
    for a, b in zip(first, second):
        assert np.array_equal(a[0], b[0]) and a[1:] == b[1:]


@pytest.mark.parametrize("name", ENV_NAMES)
def test_void_action_keeps_positions(name):
    env = make_env(name)
    state, _ = env.reset(5)
    res = env.step([0] * env.n_agents)
    slot = POSITION_SLOT[name]
    before = env._split(state.feature_vector)[slot]
    after = env._split(res.next_state.feature_vector)[slot]
    assert np.array_equal(before, after)


@pytest.mark.parametrize("name", ENV_NAMES)
def test_stepping_finished_episode_is_usage_error(name):
    env = make_env(name)
    with pytest.raises(UsageError):
        env.step([0] * env.n_agents)  # never reset
    env.reset(0)
    rng = np.random.default_rng(0)
    while not env.step(env.sample_actions(rng)).done:
        pass
    with pytest.raises(UsageError):
        env.step([0] * env.n_agents)


def test_invalid_joint_actions_rejected():
    env = make_env("oracle")
    env.reset(0)
    with pytest.raises(UsageError):
        env.step([0])
    with pytest.raises(UsageError):
        env.step([0, env.n_actions])
    with pytest.raises(UsageError):
        env.reset(-1)


def test_identical_state_action_identical_result():
    env = make_env("escape")
    state, _ = env.reset(11)
    a = env.step([1, 2])
    env.set_state(state)
    b = env.step([1, 2])
    assert a.next_state == b.next_state and a.reward == b.reward and a.terminated == b.terminated


def test_discounted_return():
    assert DiscountedReturn.from_rewards([0.0] * 5, 0.9).value == 0.0
    assert DiscountedReturn.from_rewards([1.0, 1.0, 1.0], 0.5).value == pytest.approx(1.75)
    with pytest.raises(UsageError):
        DiscountedReturn.from_rewards([1.0], 0.0)


def test_joint_action_and_state_equality():
    assert JointAction.of(np.array([1, 2])).actions == (1, 2)
    s = EnvState(np.array([1.0, 2.0], np.float32), 3)
    assert s == EnvState(np.array([1.0, 2.0], np.float32), 3)
    assert s != EnvState(np.array([1.0, 2.0], np.float32), 4)
