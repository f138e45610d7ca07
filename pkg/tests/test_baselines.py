import numpy as np
import pytest
import torch
from torch import nn

from beliefi2q.baselines import (
    EpisodeBatch,
    HystereticRates,
    RecHystIQLAgent,
    RecI2QAgent,
    RecurrentConfig,
    RecurrentI2QNetworks,
    RecurrentQNetworks,
    hysteretic_loss,
    hysteretic_update,
    rec_i2q_losses,
    rec_i2q_update,
)
from beliefi2q.core import UsageError
from beliefi2q.data import LocalEpisode
from beliefi2q.nets import flat_params, soft_update
from helpers import joint_value_iteration


# ---------------------------------------------------------------- tabular hysteresis


def test_hysteretic_hand_values():
    q = np.zeros((1, 2))
    up, psi = hysteretic_update(q, (0, 0, 1.0, 0, False), HystereticRates(0.1, 0.01), 0.9)
    assert psi == 1.0 and up[0, 0] == pytest.approx(0.1)
    down, psi = hysteretic_update(q, (0, 0, -1.0, 0, False), HystereticRates(0.1, 0.01), 0.9)
    assert psi == -1.0 and down[0, 0] == pytest.approx(-0.01)
    assert np.array_equal(q, np.zeros((1, 2)))  # input untouched


def test_hysteretic_zero_error_no_change():
    q = np.array([[0.5, 0.2], [1.0, 0.0]])
    # psi = 0.05 + 0.5 * 1.0 - 0.55 = 0
    q[0, 0] = 0.55
    new, psi = hysteretic_update(q, (0, 0, 0.05, 1, False), HystereticRates(1.0, 0.1), 0.5)
    assert psi == 0.0 and np.array_equal(new, q)


@pytest.mark.parametrize("delta", [0.5, 0.25, 2.0, 0.75])
def test_hysteretic_asymmetry_exact_ratio(delta):
    rates = HystereticRates(1.0, 0.125)
    q = np.zeros((1, 1))
    up, _ = hysteretic_update(q, (0, 0, delta, 0, True), rates, 0.9)
    down, _ = hysteretic_update(q, (0, 0, -delta, 0, True), rates, 0.9)
    assert abs(up[0, 0]) / abs(down[0, 0]) == rates.alpha / rates.beta


def test_hysteretic_equal_rates_is_q_learning():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(4, 3))
    lr, gamma = 0.3, 0.95
    for _ in range(200):
        o, a, o2 = int(rng.integers(4)), int(rng.integers(3)), int(rng.integers(4))
        r, done = float(rng.normal()), bool(rng.random() < 0.2)
        new, _ = hysteretic_update(q, (o, a, r, o2, done), HystereticRates(lr, lr), gamma)
        ref = q.copy()
        target = r + (0.0 if done else gamma * np.max(q[o2]))
        ref[o, a] = q[o, a] + lr * (target - q[o, a])
        assert new.tobytes() == ref.tobytes()
        q = new


def test_hysteretic_rates_validation():
    with pytest.raises(UsageError):
        HystereticRates(0.1, 0.5)
    with pytest.raises(UsageError):
        HystereticRates(0.0, 0.0)
    assert HystereticRates().alpha == 1.0 and HystereticRates().beta == 0.1


# ---------------------------------------------------------------- batches


def _episodes(rng, n=4, obs_dim=3, n_actions=2):
    out = []
    for k in range(n):
        length = 2 + k
        out.append(
            LocalEpisode(
                rng.normal(size=(length + 1, obs_dim)).astype(np.float32),
                rng.integers(0, n_actions, length),
                rng.normal(size=length).astype(np.float32),
                terminated=bool(k % 2),
            )
        )
    return out


def test_episode_batch_padding_and_masks():
    eps = _episodes(np.random.default_rng(0))
    b = EpisodeBatch.from_episodes(eps)
    assert b.obs.shape == (4, 6, 3) and b.actions.shape == (4, 5)
    assert b.mask.sum().item() == sum(e.length for e in eps)
    assert b.dones[1, eps[1].length - 1] == 1.0 and b.dones[0].sum() == 0.0
    with pytest.raises(UsageError):
        EpisodeBatch.from_episodes([])
    with pytest.raises(UsageError):
        EpisodeBatch.from_episodes([{"obs": 1}])


# ---------------------------------------------------------------- networks


def _constant_head(module, value):
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Linear):
                m.weight.zero_()
                m.bias.zero_()
        last = [m for m in module.modules() if isinstance(m, nn.Linear)][-1]
        last.bias.fill_(value)


def test_rec_i2q_td_losses_vanish_when_fitted_with_zero_gamma():
    torch.manual_seed(0)
    nets = RecurrentI2QNetworks(3, 2, gru_hidden=4, hidden=(8,))
    for head in (nets.q_ss, nets.q):
        _constant_head(head, 0.7)
    rng = np.random.default_rng(1)
    eps = _episodes(rng)
    for e in eps:
        e.rewards[:] = 0.7
    l_qss, _, l_q = rec_i2q_losses(nets, EpisodeBatch.from_episodes(eps), gamma=0.0, lam=0.1)
    assert l_qss.item() < 1e-12 and l_q.item() < 1e-12


def test_rec_i2q_encoder_receives_gradients_from_both_heads():
    torch.manual_seed(0)
    nets = RecurrentI2QNetworks(3, 2, gru_hidden=4, hidden=(8,))
    batch = EpisodeBatch.from_episodes(_episodes(np.random.default_rng(2)))
    l_qss, l_f, l_q = rec_i2q_losses(nets, batch, 0.9, 0.1)
    g_qss = torch.autograd.grad(l_qss, list(nets.encoder.parameters()), allow_unused=True, retain_graph=True)
    g_q = torch.autograd.grad(l_q, list(nets.encoder.parameters()), allow_unused=True, retain_graph=True)
    assert any(g is not None and g.abs().sum() > 0 for g in g_qss)
    assert any(g is not None and g.abs().sum() > 0 for g in g_q)
    g_f = torch.autograd.grad(l_f, list(nets.encoder.parameters()) + list(nets.q_ss.parameters()), allow_unused=True)
    assert all(g is None for g in g_f)


def test_rec_i2q_update_changes_parameters():
    torch.manual_seed(0)
    nets = RecurrentI2QNetworks(3, 2, gru_hidden=4, hidden=(8,))
    opts = (torch.optim.Adam(list(nets.encoder.parameters()) + list(nets.q_ss.parameters()) + list(nets.q.parameters())),
            torch.optim.Adam(nets.f.parameters()))
    before = flat_params(nets.parameters()).clone()
    out = rec_i2q_update(nets, opts, _episodes(np.random.default_rng(3)), 0.9, 0.1)
    assert set(out) == {"qss", "f", "q"}
    assert not torch.equal(before, flat_params(nets.parameters()))
    with pytest.raises(UsageError):
        rec_i2q_update(nets, opts, [], 0.9, 0.1)


def test_hysteretic_loss_weights():
    torch.manual_seed(0)
    nets = RecurrentQNetworks(3, 2, gru_hidden=4, hidden=(8,))
    batch = EpisodeBatch.from_episodes(_episodes(np.random.default_rng(4)))
    rates = HystereticRates(1.0, 0.1)
    loss = hysteretic_loss(nets, batch, rates, 0.9).item()
    with torch.no_grad():
        enc = nets.encoder(batch.obs, batch.actions)
        q_sa = nets.q(enc[:, :-1]).gather(-1, batch.actions[..., None]).squeeze(-1)
        boot = nets.q_target(nets.encoder_target(batch.obs, batch.actions)[:, 1:]).max(-1).values
        psi = batch.rewards + 0.9 * (1 - batch.dones) * boot - q_sa
        w = np.where(psi.numpy() > 0, 1.0, 0.1)
        ref = (w * psi.numpy() ** 2 * batch.mask.numpy()).sum() / batch.mask.numpy().sum()
    assert loss == pytest.approx(ref, rel=1e-6)


def test_recurrent_hidden_resets_each_episode():
    cfg = RecurrentConfig(gru_hidden=4, hidden=(8,))
    for cls in (RecI2QAgent, RecHystIQLAgent):
        torch.manual_seed(0)
        agent = cls(0, 3, 2, cfg, seed=0)
        o0 = np.ones(3, np.float32)
        agent.begin_episode(o0)
        fresh = agent._h.clone()
        for _ in range(4):
            agent.record(agent.act(0.5), 0.0, np.random.default_rng(0).normal(size=3).astype(np.float32))
        agent.end_episode(False)
        agent.begin_episode(o0)
        assert torch.equal(agent._h, fresh)
        expected = agent.nets.encoder(torch.as_tensor(o0)[None, None], torch.zeros(1, 0, dtype=torch.long))[0, 0]
        assert torch.allclose(agent._h, expected, atol=1e-6)


def test_recurrent_agents_update_and_round_trip():
    cfg = RecurrentConfig(gru_hidden=4, hidden=(8,), batch_episodes=3)
    rng = np.random.default_rng(5)
    for cls in (RecI2QAgent, RecHystIQLAgent):
        agent = cls(1, 3, 2, cfg, seed=2)
        for _ in range(3):
            agent.begin_episode(rng.normal(size=3).astype(np.float32))
            for _ in range(4):
                agent.record(agent.act(1.0), float(rng.normal()), rng.normal(size=3).astype(np.float32))
            agent.end_episode(True)
        assert len(agent.sample_episodes()) == 3
        out = agent.update()
        assert all(np.isfinite(v) for v in out.values())
        agent.update_targets()
        clone = cls(1, 3, 2, cfg, seed=2)
        clone.load_state_dict(agent.state_dict())
        assert torch.equal(flat_params(clone.nets.parameters()), flat_params(agent.nets.parameters()))


def test_rec_i2q_learns_tabular_values():
    """Fully observable toy (one-hot states, successor set by the learner's own action)."""
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    n_states, n_actions, gamma = 4, 2, 0.5
    own = rng.integers(0, n_states, size=(n_states, n_actions))
    reward = rng.uniform(-1, 1, size=(n_states, n_states))
    v_star = joint_value_iteration(np.repeat(own[:, :, None], 2, axis=2), reward, gamma).max(axis=1)
    eye = np.eye(n_states, dtype=np.float32)

    def episode(length=6):
        s = int(rng.integers(n_states))
        obs, acts, rews = [eye[s]], [], []
        for _ in range(length):
            a = int(rng.integers(n_actions))
            s2 = own[s, a]
            obs.append(eye[s2]), acts.append(a), rews.append(reward[s, s2])
            s = s2
        return LocalEpisode(np.stack(obs), np.array(acts), np.array(rews, np.float32), False)

    data = [episode() for _ in range(256)]
    nets = RecurrentI2QNetworks(n_states, n_actions, gru_hidden=16, hidden=(64, 64))
    main = list(nets.encoder.parameters()) + list(nets.q_ss.parameters()) + list(nets.q.parameters())
    opts = (torch.optim.Adam(main, lr=3e-3), torch.optim.Adam(nets.f.parameters(), lr=3e-3))
    for _ in range(1500):
        batch = [data[i] for i in rng.integers(0, len(data), 32)]
        rec_i2q_update(nets, opts, batch, gamma, lam=0.01)
        soft_update(nets.q_ss_target, nets.q_ss, 0.05)
        soft_update(nets.q_target, nets.q, 0.05)
    learned = []
    with torch.no_grad():
        for s in range(n_states):
            vals = []
            for a in range(n_actions):
                obs = torch.as_tensor(np.stack([eye[s], eye[own[s, a]]]))[None]
                enc = nets.encoder(obs, torch.tensor([[a]]))
                vals.append(nets.q_ss(enc[:, 0], enc[:, 1]).item())
            learned.append(max(vals))
    assert np.max(np.abs(np.array(learned) - v_star)) < 1e-2
