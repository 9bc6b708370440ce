import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coinfer.agent import (DdpgAgent, LearnedPolicy, ReplayMemory, decode_offload,
                           decode_sampling, encode_state, feature_size,
                           load_checkpoint, save_checkpoint)
from coinfer.env import Environment, NetworkState

from conftest import make_scenario


# --- state encoding ---------------------------------------------------------------


def test_feature_size_formula():
    # 2N + 2M + N*|states|
    assert feature_size(make_scenario(device_counts=(5, 5))) == 20 + 4 + 30
    assert feature_size(make_scenario(device_counts=(2, 2))) == 8 + 4 + 12
    assert feature_size(make_scenario(device_counts=(1,))) == 2 + 2 + 3


def test_encode_state_layout_and_normalization():
    sc = make_scenario(device_counts=(1, 1))
    state = NetworkState(
        local_backlog_bits=np.array([3.84e6, 0.0]),       # device 0 full
        edge_backlog_bits=np.array([0.0, 9.6e6]),         # service 1 half full
        channel=np.array([0, 2], dtype=np.intp),
        arrival_bits=np.array([1.3 * 768e3, 0.0]),        # device 0 at the max draw
        deficit=np.array([0.0, 2.5]),
    )
    feats = encode_state(state, sc)
    assert feats.shape == (feature_size(sc),)
    assert feats[0] == pytest.approx(1.0)   # full local queue
    assert feats[1] == 0.0
    assert feats[2] == 0.0                  # edge queue service 0
    assert feats[3] == pytest.approx(0.5)
    onehot = feats[4:10].reshape(2, 3)
    assert onehot[0].tolist() == [1.0, 0.0, 0.0]
    assert onehot[1].tolist() == [0.0, 0.0, 1.0]
    assert feats[10] == pytest.approx(1.0)  # arrival at cap
    assert feats[11] == 0.0
    assert feats[12] == 0.0 and feats[13] == pytest.approx(2.5)  # raw deficits
    within_unit = np.concatenate([feats[:12]])
    assert ((within_unit >= 0) & (within_unit <= 1)).all()


def test_encode_state_all_zero_except_channel():
    sc = make_scenario(device_counts=(1, 1))
    state = NetworkState(np.zeros(2), np.zeros(2), np.array([1, 1], dtype=np.intp),
                         np.zeros(2), np.zeros(2))
    feats = encode_state(state, sc)
    onehot_slice = feats[4:10]
    assert onehot_slice.sum() == 2.0
    others = np.concatenate([feats[:4], feats[10:]])
    assert (others == 0).all()


# --- action decoding ---------------------------------------------------------------


def test_decode_sampling_boundaries():
    assert decode_sampling(np.array([1.0]), 4) == np.array([3])
    assert decode_sampling(np.array([-1.0]), 4) == np.array([0])
    assert decode_sampling(np.array([0.0]), 4) == np.array([1])  # ceil(2) -> k=2
    assert decode_sampling(np.array([0.99]), 4) == np.array([3])
    assert decode_sampling(np.array([-0.51]), 4) == np.array([0])


def test_decode_offload_tie_resolves_to_offload():
    assert decode_offload(np.array([0.0])) == np.array([0])
    assert decode_offload(np.array([1e-12])) == np.array([1])
    assert decode_offload(np.array([-0.3])) == np.array([0])


@given(st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=8, max_size=8))
@settings(max_examples=300)
def test_action_decoding_is_total(u):
    """Every continuous vector in the cube maps to a valid Action."""
    sc = make_scenario(device_counts=(2, 2))
    agent = DdpgAgent(sc, seed=0)
    state = Environment(sc, 5).reset()
    action = agent.decode_action(state, np.array(u))
    action.validate(sc)
    assert action.allocation.sum() <= 1.0 + 1e-9


# --- replay memory -----------------------------------------------------------------


def test_replay_capacity_and_fifo():
    mem = ReplayMemory(capacity=4, state_dim=2, action_dim=1)
    for i in range(6):
        mem.push(np.full(2, i), np.full(1, i), float(i), np.full(2, i + 0.5))
    assert len(mem) == 4
    # oldest two evicted: stored rewards are {2, 3, 4, 5}
    assert sorted(mem.rewards.tolist()) == [2.0, 3.0, 4.0, 5.0]


def test_replay_sampling_without_replacement(rng):
    mem = ReplayMemory(capacity=100, state_dim=1, action_dim=1)
    for i in range(50):
        mem.push([i], [0.0], float(i), [0.0])
    _, _, rewards, _ = mem.sample(50, rng)
    assert len(set(rewards.tolist())) == 50  # all distinct


def test_replay_sampling_uniformity(rng):
    mem = ReplayMemory(capacity=32, state_dim=1, action_dim=1)
    for i in range(32):
        mem.push([0.0], [0.0], float(i), [0.0])
    counts = np.zeros(32)
    draws = 100_000 // 8
    for _ in range(draws):
        _, _, rewards, _ = mem.sample(8, rng)
        for r in rewards:
            counts[int(r)] += 1
    expected = draws * 8 / 32
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # chi-square 99.9% quantile at 31 dof
    assert chi2 < 61.1


def test_exploration_noise_statistics():
    sc = make_scenario(device_counts=(2, 2))
    agent = DdpgAgent(sc, seed=3)
    draws = agent.noise_rng.normal(0.0, sc.agent.noise_std, size=100_000)
    assert abs(draws.mean()) < 0.01
    assert draws.std() == pytest.approx(sc.agent.noise_std, rel=0.05)


# --- learning machinery --------------------------------------------------------------


def test_update_skipped_until_warmup():
    sc = make_scenario(device_counts=(1, 1))
    agent = DdpgAgent(sc, seed=0)
    state = Environment(sc, 1).reset()
    feats = encode_state(state, sc)
    before = [p.copy() for p in agent.actor.parameters()]
    for _ in range(agent.warmup - 1):
        agent.memory.push(feats, np.zeros(agent.action_dim), -1.0, feats)
        assert agent.update() is None
    for p, b in zip(agent.actor.parameters(), before):
        assert p == pytest.approx(b, abs=0.0)
    agent.memory.push(feats, np.zeros(agent.action_dim), -1.0, feats)
    assert agent.update() is not None  # warm-up reached


def test_update_moves_parameters_and_targets_track(rng):
    sc = make_scenario(device_counts=(1, 1))
    agent = DdpgAgent(sc, seed=0)
    for _ in range(agent.warmup):
        s = rng.normal(size=agent.state_dim)
        agent.memory.push(s, rng.uniform(-1, 1, agent.action_dim),
                          float(rng.normal()), rng.normal(size=agent.state_dim))
    actor_before = [p.copy() for p in agent.actor.parameters()]
    target_before = [p.copy() for p in agent.target_actor.parameters()]
    loss = agent.update()
    assert np.isfinite(loss)
    assert any((p != b).any() for p, b in zip(agent.actor.parameters(), actor_before))
    # targets moved a little toward the online nets
    assert any((p != b).any() for p, b in
               zip(agent.target_actor.parameters(), target_before))


def test_critic_target_arithmetic():
    # y = r + discount * Q'   (one-step bootstrap)
    assert -1.0 + 0.85 * -2.0 == pytest.approx(-2.7)


def test_train_episode_smoke_improves_reward():
    sc = make_scenario(device_counts=(1, 1), episodes=20, slots=200)
    env = Environment(sc, np.random.SeedSequence(1).spawn(2)[0])
    agent = DdpgAgent(sc, np.random.SeedSequence(1).spawn(2)[1])
    rewards = []
    for _ in range(20):
        metrics = agent.train_episode(env)
        assert np.isfinite(metrics.mean_reward)
        rewards.append(metrics.mean_reward)
    assert np.mean(rewards[-4:]) > np.mean(rewards[:4])


def test_train_episode_determinism():
    sc = make_scenario(device_counts=(1, 1), episodes=3, slots=30)
    runs = []
    for _ in range(2):
        env = Environment(sc, np.random.SeedSequence(9).spawn(2)[0])
        agent = DdpgAgent(sc, np.random.SeedSequence(9).spawn(2)[1])
        runs.append([agent.train_episode(env).mean_reward for _ in range(3)])
    assert runs[0] == runs[1]


# --- checkpointing -------------------------------------------------------------------


def _trained_agent(sc, episodes=2):
    env = Environment(sc, np.random.SeedSequence(4).spawn(2)[0])
    agent = DdpgAgent(sc, np.random.SeedSequence(4).spawn(2)[1])
    for _ in range(episodes):
        agent.train_episode(env)
    return agent


def test_checkpoint_round_trips_exactly(tmp_path):
    sc = make_scenario(device_counts=(1, 1), episodes=2, slots=40)
    agent = _trained_agent(sc)
    path = tmp_path / "checkpoint.bin"
    save_checkpoint(agent, path)
    loaded = load_checkpoint(path, sc)
    for a, b in zip(agent.actor.parameters() + agent.critic.parameters(),
                    loaded.actor.parameters() + loaded.critic.parameters()):
        assert np.array_equal(a, b)
    for a, b in zip(agent.critic_opt.m + agent.critic_opt.v,
                    loaded.critic_opt.m + loaded.critic_opt.v):
        assert np.array_equal(a, b)
    assert loaded.critic_opt.t == agent.critic_opt.t
    assert loaded.noise_rng.bit_generator.state == agent.noise_rng.bit_generator.state
    # saving the loaded agent reproduces the file byte for byte
    second = tmp_path / "again.bin"
    save_checkpoint(loaded, second)
    assert path.read_bytes() == second.read_bytes()


def test_checkpoint_rejects_mismatched_scenario(tmp_path):
    sc = make_scenario(device_counts=(1, 1), episodes=1, slots=20)
    agent = _trained_agent(sc, episodes=1)
    path = tmp_path / "checkpoint.bin"
    save_checkpoint(agent, path)
    other = make_scenario(device_counts=(2, 2))
    with pytest.raises(ValueError, match="do not match the scenario"):
        load_checkpoint(path, other)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(path, make_scenario(device_counts=(1, 1)))


def test_learned_policy_greedy_and_pure():
    sc = make_scenario(device_counts=(1, 1), episodes=1, slots=30)
    agent = _trained_agent(sc, episodes=1)
    policy = LearnedPolicy(agent)
    env = Environment(sc, 77)
    state = env.reset()
    params_before = [p.copy() for p in agent.actor.parameters()]
    a1 = policy.act(state)
    a2 = policy.act(state)
    assert np.array_equal(a1.sampling, a2.sampling)  # no exploration noise
    assert np.array_equal(a1.offload, a2.offload)
    for p, b in zip(agent.actor.parameters(), params_before):
        assert np.array_equal(p, b)


def test_learned_policy_fixed_allocation_override():
    sc = make_scenario(device_counts=(1, 1), episodes=1, slots=20)
    agent = _trained_agent(sc, episodes=1)
    shares = np.array([0.25, 0.75])
    policy = LearnedPolicy(agent, allocation_shares=shares)
    state = Environment(sc, 8).reset()
    assert policy.act(state).allocation == pytest.approx(shares)
