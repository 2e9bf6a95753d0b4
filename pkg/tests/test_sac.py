import math

import numpy as np
import pytest

from coverpath.gridworld import EnvConfig, GridWorld, reset, state_tensor
from coverpath.nn.gradcheck import grad_check
from coverpath.nn.network import TrunkConfig, policy_probs
from coverpath.nn.tensor import Tensor
from coverpath.sac import (
    GREEDY,
    LOG_FIELDS,
    STOCHASTIC,
    Batch,
    ReplayBuffer,
    SacAgent,
    SacConfig,
    TrainingDiverged,
    mse,
    next_state_values,
    polyak,
    read_log,
    sample_categorical,
    soft_target,
    train,
    write_log,
)

from conftest import open_map

TINY = TrunkConfig(grid_size=4, channels=4, heads=2, hidden=6, kernel=3, init_std=0.3)


def tiny_agent(seed=0, **kw):
    kw.setdefault("batch_size", 4)
    kw.setdefault("window", 2)
    kw.setdefault("learning_starts", 8)
    return SacAgent(TINY, SacConfig(**kw), seed=seed)


def filled_buffer(n_episodes=3, length=7, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer()
    for e in range(n_episodes):
        buf.start_episode((rng.random((4, 4, 4)) < 0.3).astype(float))
        for t in range(length):
            buf.add(int(rng.integers(4)), float(rng.normal()), (rng.random((4, 4, 4)) < 0.3).astype(float), t == length - 1)
    return buf


def set_policy_probs(agent, probs):
    for p in agent.policy.parameters():
        p.data[...] = 0.0
    agent.policy.params["head.b"].data[:] = np.log(probs)


# -- worked example ----------------------------------------------------------


def test_worked_example_target():
    y = soft_target(0.85, 0.98, False, 1.7, math.log(0.2), 0.1, "penalty")
    assert abs(y - 2.3583) <= 0.002
    assert y == pytest.approx(0.85 + 0.98 * (1.7 - 0.1 * -math.log(0.2)), abs=1e-15)


def test_worked_example_q_loss():
    loss = SacAgent.q_loss(Tensor(np.array([[[2.1, 0, 0, 0]]])), np.array([[0]]), np.array([[2.36]]), np.ones((1, 1)))
    assert abs(float(loss.data) - 0.0676) < 1e-12
    assert abs(mse([2.1], [2.36]) - 0.0676) < 1e-12


def test_worked_example_soft_update():
    assert polyak(np.array(0.0), np.array(1.0), 0.005) == 0.005
    agent = tiny_agent()
    for net in (agent.critic1, agent.critic2):
        for p in net.parameters():
            p.data[...] = 1.0
    for net in (agent.target1, agent.target2):
        for p in net.parameters():
            p.data[...] = 0.0
    agent.soft_update(0.005)
    for net in (agent.target1, agent.target2):
        for p in net.parameters():
            assert np.all(p.data == 0.005)


def test_soft_update_limits():
    agent = tiny_agent()
    agent.soft_update(1.0)
    for name, p in agent.critic1.params.items():
        assert np.array_equal(agent.target1.params[name].data, p.data)
    before = {k: p.data.copy() for k, p in agent.target1.params.items()}
    agent.soft_update(0.3)  # targets already equal critics
    for k, p in agent.target1.params.items():
        np.testing.assert_allclose(p.data, before[k], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        agent.soft_update(0.0)


# -- targets and losses --------------------------------------------------------


def test_target_terminal_and_zero_alpha():
    assert soft_target(0.85, 0.98, True, 1.7, math.log(0.2), 0.1) == 0.85
    assert soft_target(0.5, 0.9, False, 2.0, math.log(0.3), 0.0) == pytest.approx(0.5 + 0.9 * 2.0)
    bonus = soft_target(0.85, 0.98, False, 1.7, math.log(0.2), 0.1)
    assert bonus == pytest.approx(0.85 + 0.98 * (1.7 - 0.1 * math.log(0.2)))
    assert bonus > soft_target(0.85, 0.98, False, 1.7, math.log(0.2), 0.1, "penalty")


@pytest.mark.parametrize("mode", ["sampled", "expected"])
def test_compute_target_uniform_policy_zero_critics(mode):
    agent = tiny_agent(target_mode=mode, init_alpha=0.2)
    for net in (agent.target1, agent.target2):
        for p in net.parameters():
            p.data[...] = 0.0
    batch = filled_buffer().sample(5, 2, np.random.default_rng(1))
    probs = np.full(batch.actions.shape + (4,), 0.25)
    y = agent.compute_target(batch, probs, np.log(probs))
    expect = batch.rewards + 0.98 * (1 - batch.dones) * (-0.2 * math.log(0.25))
    np.testing.assert_allclose(y, expect, atol=1e-12)


def test_q_loss_mean_over_batch():
    q = Tensor(np.array([[[1.1, 0, 0, 0]], [[0, 0, 2.3, 0]]]))
    loss = SacAgent.q_loss(q, np.array([[0], [2]]), np.array([[1.0], [2.0]]), np.ones((2, 1)))
    assert float(loss.data) == pytest.approx(0.05, abs=1e-12)
    assert float(SacAgent.q_loss(q, np.array([[0], [2]]), np.array([[1.1], [2.3]]), np.ones((2, 1))).data) == 0.0


def test_policy_loss_closed_form():
    probs = Tensor(np.full((1, 1, 4), 0.25))
    loss = SacAgent.policy_loss(probs, Tensor(np.log(probs.data)), np.full((1, 1, 4), 1.3), 0.2, np.ones((1, 1)))
    assert float(loss.data) == pytest.approx(0.2 * math.log(0.25) - 1.3, abs=1e-12)


def test_policy_loss_zero_alpha_moves_mass_to_best_action():
    logits = Tensor(np.zeros((1, 1, 4)), requires_grad=True)
    min_q = np.array([[[0.0, 1.0, 0.0, 0.0]]])
    from coverpath.nn.tensor import log_softmax, softmax

    loss = SacAgent.policy_loss(softmax(logits), log_softmax(logits), min_q, 0.0, np.ones((1, 1)))
    assert float(loss.data) == pytest.approx(-0.25)
    loss.backward()
    assert np.argmin(logits.grad[0, 0]) == 1  # gradient descent raises the logit of action 1


def test_alpha_loss_fixed_point_and_direction():
    H = 0.5 * math.log(4)
    # two-action split with entropy exactly H is hard to hit; use a distribution and set H to its entropy
    p = np.array([[[0.7, 0.1, 0.1, 0.1]]])
    ent = float(-(p * np.log(p)).sum())
    la = Tensor(np.array(math.log(0.1)), requires_grad=True)
    SacAgent.alpha_loss(la, p, np.log(p), ent, np.ones((1, 1))).backward()
    assert abs(float(la.grad)) < 1e-15
    # too deterministic -> alpha goes up under gradient descent
    p = np.array([[[0.97, 0.01, 0.01, 0.01]]])
    assert float(-(p * np.log(p)).sum()) < H
    la = Tensor(np.array(math.log(0.1)), requires_grad=True)
    SacAgent.alpha_loss(la, p, np.log(p), H, np.ones((1, 1))).backward()
    assert float(la.grad) < 0


def test_alpha_update_raises_alpha_for_deterministic_policy():
    agent = tiny_agent()
    set_policy_probs(agent, [0.97, 0.01, 0.01, 0.01])
    before = agent.alpha
    agent.update(filled_buffer().sample(4, 2, np.random.default_rng(0)))
    assert agent.alpha > before


def test_alpha_stays_positive_under_random_updates():
    from coverpath.nn.optim import Adam

    rng = np.random.default_rng(0)
    la = Tensor(np.array(math.log(0.1)), requires_grad=True)
    opt = Adam([la], 1e-1)
    for _ in range(10_000):
        p = rng.dirichlet(np.full(4, 0.3), size=(2, 1))
        opt.zero_grad()
        SacAgent.alpha_loss(la, p, np.log(np.maximum(p, 1e-300)), 0.5 * math.log(4), np.ones((2, 1))).backward()
        opt.step()
        assert math.exp(float(la.data)) > 0


def test_loss_gradients_match_finite_differences():
    agent = tiny_agent()
    batch = filled_buffer().sample(3, 2, np.random.default_rng(2))
    L = batch.actions.shape[1]
    y = np.random.default_rng(3).normal(size=batch.actions.shape)
    cur = batch.states[:, :L]
    fq = lambda: SacAgent.q_loss(agent.critic1.forward(cur)[0], batch.actions, y, batch.mask)
    assert grad_check(fq, agent.critic1.parameters(), max_coords=6) < 1e-3
    min_q = np.random.default_rng(4).normal(size=batch.actions.shape + (4,))

    def fp():
        probs, logp, _ = policy_probs(agent.policy, cur)
        return SacAgent.policy_loss(probs, logp, min_q, 0.3, batch.mask)

    assert grad_check(fp, agent.policy.parameters(), max_coords=6) < 1e-3
    p = np.random.default_rng(5).dirichlet(np.ones(4), size=batch.actions.shape)
    fa = lambda: SacAgent.alpha_loss(agent.log_alpha, p, np.log(p), 0.69, batch.mask)
    assert grad_check(fa, [agent.log_alpha]) < 1e-3


def test_update_touches_only_its_own_parameters():
    agent = tiny_agent(tau=0.5)
    batch = filled_buffer().sample(4, 2, np.random.default_rng(0))
    snap = {tag: {k: p.data.copy() for k, p in net.params.items()} for tag, net in agent._networks()}
    agent.update(batch)
    for tag, net in agent._networks():
        changed = any(not np.array_equal(p.data, snap[tag][k]) for k, p in net.params.items())
        assert changed, tag
    # targets moved exactly by Polyak toward the updated critics, never by gradients
    for tgt, src, tag in ((agent.target1, agent.critic1, "target1"), (agent.target2, agent.critic2, "target2")):
        for k, p in tgt.params.items():
            np.testing.assert_allclose(p.data, 0.5 * src.params[k].data + 0.5 * snap[tag][k], rtol=0, atol=1e-15)
            assert p.grad is None or not np.any(p.grad)


# -- acting --------------------------------------------------------------------


def test_sampling_frequencies():
    rng = np.random.default_rng(7)
    p = np.array([0.15, 0.25, 0.30, 0.30])
    draws = np.array([sample_categorical(p, rng) for _ in range(100_000)])
    np.testing.assert_allclose(np.bincount(draws, minlength=4) / len(draws), p, atol=0.01)


def test_sample_action_modes():
    agent = tiny_agent()
    set_policy_probs(agent, [0.15, 0.25, 0.30, 0.30])
    x = state_tensor(open_map(4), reset(open_map(4), EnvConfig()))
    a, lp, _ = agent.sample_action(x, None, GREEDY)
    assert a == 2 and lp == pytest.approx(math.log(0.30))
    a, lp, _ = agent.sample_action(x, None, STOCHASTIC)
    assert lp == pytest.approx(math.log([0.15, 0.25, 0.30, 0.30][a]))
    with pytest.raises(ValueError):
        agent.sample_action(x, None, "argmax")


def test_uniform_policy_entropy():
    agent = tiny_agent()
    set_policy_probs(agent, [0.25] * 4)
    x = state_tensor(open_map(4), reset(open_map(4), EnvConfig()))
    lps = [agent.sample_action(x, None, STOCHASTIC)[1] for _ in range(2000)]
    assert -np.mean(lps) == pytest.approx(math.log(4), rel=0.01)


# -- replay ------------------------------------------------------------------


def test_windows_stay_inside_episodes():
    buf = ReplayBuffer()
    # states carry (episode, t) in their first two cells so windows can be traced back
    lengths = [1, 5, 9]
    for e, n in enumerate(lengths):
        s = np.zeros((4, 4, 4))
        s[0, 0, 0], s[0, 0, 1] = e + 1, 0
        buf.start_episode(s)
        for t in range(n):
            s = np.zeros((4, 4, 4))
            s[0, 0, 0], s[0, 0, 1] = e + 1, t + 1
            buf.add(t % 4, float(t), s, t == n - 1)
    batch = buf.sample(200, 4, np.random.default_rng(0))
    assert batch.states.shape == (200, 5, 4, 4, 4)
    for b in range(200):
        eps = set(batch.states[b, :, 0, 0, 0])
        assert len(eps) == 1
        ts = batch.states[b, :, 0, 0, 1]
        n = int(batch.mask[b].sum())
        assert n >= 1 and np.all(np.diff(ts[: n + 1]) == 1)
        assert np.all(batch.mask[b, n:] == 0) and np.all(batch.rewards[b, n:] == 0)
        assert np.all(batch.mask[b, :n] == 1)
        # windows open where acting resets the recurrent state
        assert ts[0] % 4 == 0
    starts = {(int(batch.states[b, 0, 0, 0, 0]), int(batch.states[b, 0, 0, 0, 1])) for b in range(200)}
    assert starts == {(1, 0), (2, 0), (2, 4), (3, 0), (3, 4), (3, 8)}


def test_bootstrap_state_is_evaluated_from_a_zero_recurrent_state():
    agent = tiny_agent()
    rng = np.random.default_rng(3)
    states = (rng.random((2, 3, 4, 4, 4)) < 0.4).astype(float)
    got = next_state_values(agent.critic1, states)
    carried, _ = agent.critic1.forward(states[:, :2])
    alone, _ = agent.critic1.forward(states[:, 2:])
    assert np.array_equal(got[:, 0], carried.data[:, 1])
    assert np.array_equal(got[:, 1], alone.data[:, 0])
    full, _ = agent.critic1.forward(states)
    assert not np.allclose(got[:, 1], full.data[:, 2])


def test_buffer_capacity_evicts_whole_episodes():
    buf = filled_buffer(n_episodes=5, length=4)
    small = ReplayBuffer(capacity=10)
    for ep in buf.episodes:
        small.start_episode(ep.states[0])
        for a, r, s, d in zip(ep.actions, ep.rewards, ep.states[1:], ep.dones):
            small.add(a, r, s, d)
    assert len(small) <= 10
    assert len(small) == sum(len(e) for e in small.episodes)
    assert all(len(e) == 4 for e in small.episodes)


def test_buffer_rejects_bad_transitions():
    buf = ReplayBuffer()
    with pytest.raises(RuntimeError):
        buf.add(0, 0.0, np.zeros((4, 2, 2)), False)
    buf.start_episode(np.zeros((4, 2, 2)))
    with pytest.raises(ValueError):
        buf.add(0, float("nan"), np.zeros((4, 2, 2)), False)
    with pytest.raises(ValueError):
        buf.add(4, 0.0, np.zeros((4, 2, 2)), False)


def test_config_validation():
    for bad in (dict(gamma=1.0), dict(tau=0), dict(target_mode="mean"), dict(window=0), dict(entropy_sign="x")):
        with pytest.raises(ValueError):
            SacConfig(**bad)
    assert SacConfig().entropy_target == pytest.approx(0.5 * math.log(4))


# -- training loop and checkpoints ---------------------------------------------


def small_env():
    return GridWorld(open_map(4, stations=[(0, 0), (3, 3)]), EnvConfig(e_max=30, e_min=5))


def test_train_zero_episodes_is_a_no_op():
    agent = tiny_agent()
    snap = agent.policy.state_arrays()
    assert train(small_env(), agent, 0) == []
    for k, v in agent.policy.state_arrays().items():
        assert np.array_equal(v, snap[k])


def test_train_is_reproducible(tmp_path):
    logs = []
    for i in range(2):
        agent = tiny_agent(seed=5)
        recs = train(small_env(), agent, 3)
        path = tmp_path / f"log{i}.csv"
        write_log(recs, path)
        logs.append(path.read_bytes())
    assert logs[0] == logs[1]
    rows = read_log(tmp_path / "log0.csv")
    assert [int(r["episode"]) for r in rows] == [1, 2, 3]
    assert (tmp_path / "log0.csv").read_text().splitlines()[0] == ",".join(LOG_FIELDS)


def test_checkpoint_round_trip_continues_identically(tmp_path):
    agent = tiny_agent(seed=2)
    train(small_env(), agent, 2)
    agent.save(tmp_path / "ck.npz", episode=2)
    clone, meta = SacAgent.load(tmp_path / "ck.npz")
    assert meta == {"episode": 2}
    assert clone.updates == agent.updates and clone.env_steps == agent.env_steps
    for (tag, a), (_, b) in zip(agent._networks(), clone._networks()):
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data), (tag, k)
    batch = filled_buffer().sample(4, 2, np.random.default_rng(9))
    ia, ib = agent.update(batch), clone.update(batch)
    assert ia == ib


def test_divergence_writes_diagnostic_checkpoint(tmp_path):
    agent = tiny_agent(learning_starts=1)
    agent.critic1.params["head.b"].data[:] = np.inf
    with pytest.raises(TrainingDiverged) as info:
        train(small_env(), agent, 1, diagnostic_path=tmp_path / "diag.npz")
    assert info.value.checkpoint == tmp_path / "diag.npz"
    assert (tmp_path / "diag.npz").exists()


def test_truncated_steps_are_not_terminal():
    env = GridWorld(open_map(4), EnvConfig(e_max=100, e_min=5, max_steps=6))
    buf = ReplayBuffer()
    train(env, tiny_agent(learning_starts=10_000), 1, buffer=buf)
    ep = buf.episodes[0]
    assert len(ep) == 6 and not any(ep.dones)
