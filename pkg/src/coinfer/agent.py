"""Actor-critic learner with replay memory and an embedded allocation subroutine.

The actor emits one sampling scalar and one offload scalar per device, each
in [-1, 1]; execution quantizes them to a sampling level and an offload bit
while the edge compute split comes from the closed-form allocator, so the
networks never have to learn it.  Replay stores the continuous
pre-quantization action, keeping the critic differentiable in the action.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .allocator import optimal_allocation, service_loads
from .config import AgentConfig, ScenarioConfig
from .env import Action, Environment, NetworkState
from .nets import Adam, Mlp, soft_update

HIDDEN_SIZES = (64, 32)

CHECKPOINT_MAGIC = b"CINF"
CHECKPOINT_VERSION = 1


def feature_size(scenario: ScenarioConfig) -> int:
    n, m = scenario.device_count, scenario.service_count
    return 2 * n + 2 * m + n * len(scenario.channel.states)


def encode_state(state: NetworkState, scenario: ScenarioConfig) -> np.ndarray:
    """Flatten a network state into learner features.

    Backlogs and arrivals are normalized by their maxima, channels become
    per-device one-hots, deficits pass through unscaled (they are the only
    unbounded coordinate and their magnitude is the constraint pressure).
    """
    n = scenario.device_count
    onehot = np.zeros((n, len(scenario.channel.states)))
    onehot[np.arange(n), state.channel] = 1.0
    # Largest possible draw; floored so silenced devices (mean rate <= -0.5,
    # arrivals always zero) do not divide by zero.
    arrival_cap = np.maximum(
        scenario.dev_raw_bits * (scenario.dev_arrival_rate + 0.5), 1e-12
    )
    return np.concatenate([
        state.local_backlog_bits / scenario.dev_local_cap,
        state.edge_backlog_bits / scenario.svc_edge_cap,
        onehot.ravel(),
        state.arrival_bits / arrival_cap,
        state.deficit,
    ])


def decode_sampling(u: np.ndarray, level_count: int) -> np.ndarray:
    """Map sampling scalars in [-1, 1] to 0-based level indices.

    The interval is split into ``level_count`` equal bins; -1 maps to the
    lowest level and +1 to the highest.
    """
    k = np.ceil((np.asarray(u, dtype=float) + 1.0) * 0.5 * level_count)
    return (np.clip(k, 1, level_count) - 1).astype(np.intp)


def decode_offload(u: np.ndarray) -> np.ndarray:
    """Map offload scalars to bits; the tie at exactly 0 resolves to offload."""
    return (np.asarray(u, dtype=float) > 0).astype(np.intp)


class ReplayMemory:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, state, action, reward: float, next_state) -> None:
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, count: int, rng: np.random.Generator):
        """Uniform sample without replacement within the minibatch."""
        idx = rng.choice(self._size, size=count, replace=False)
        return (self.states[idx], self.actions[idx],
                self.rewards[idx], self.next_states[idx])


@dataclass
class EpisodeMetrics:
    mean_delay: float
    mean_reward: float
    mean_accuracy: np.ndarray
    final_deficit: np.ndarray


class DdpgAgent:
    """Deterministic policy-gradient learner over the continuous action relaxation."""

    def __init__(self, scenario: ScenarioConfig, seed):
        self.scenario = scenario
        self.cfg: AgentConfig = scenario.agent
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        init_ss, noise_ss, replay_ss = ss.spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.replay_rng = np.random.default_rng(replay_ss)

        self.state_dim = feature_size(scenario)
        self.action_dim = 2 * scenario.device_count
        self.actor = Mlp([self.state_dim, *HIDDEN_SIZES, self.action_dim],
                         init_rng, output="tanh", final_scale=3e-3)
        self.critic = Mlp([self.state_dim + self.action_dim, *HIDDEN_SIZES, 1],
                          init_rng, output="linear")
        self.target_actor = self.actor.clone()
        self.target_critic = self.critic.clone()
        self.actor_opt = Adam(self.actor.parameters(), self.cfg.actor_lr)
        self.critic_opt = Adam(self.critic.parameters(), self.cfg.critic_lr)
        self.memory = ReplayMemory(self.cfg.replay_capacity, self.state_dim, self.action_dim)
        self.warmup = max(self.cfg.warmup_batches * self.cfg.minibatch, self.cfg.minibatch)

    # --- acting -----------------------------------------------------------

    def policy(self, features: np.ndarray) -> np.ndarray:
        return self.actor.forward(features[None, :])[0]

    def act(self, state: NetworkState, explore: bool,
            allocation_shares: np.ndarray | None = None) -> tuple[np.ndarray, Action]:
        """Pick the slot action; returns the continuous vector and its decoding.

        With ``explore`` set, Gaussian noise is added before clipping and
        quantization.  ``allocation_shares`` overrides the embedded optimal
        allocation (used by the fixed-allocation policy variant).
        """
        u = self.policy(encode_state(state, self.scenario))
        if explore and self.cfg.noise_std > 0:
            u = u + self.noise_rng.normal(0.0, self.cfg.noise_std, size=u.shape)
        u = np.clip(u, -1.0, 1.0)
        return u, self.decode_action(state, u, allocation_shares)

    def decode_action(self, state: NetworkState, u: np.ndarray,
                      allocation_shares: np.ndarray | None = None) -> Action:
        n = self.scenario.device_count
        levels = decode_sampling(u[:n], self.scenario.ladder.count)
        offload = decode_offload(u[n:])
        bits = state.arrival_bits * (levels + 1.0) / self.scenario.ladder.count
        if allocation_shares is None:
            loads = service_loads(self.scenario, state.edge_backlog_bits, bits, offload)
            shares = optimal_allocation(loads)
        else:
            shares = allocation_shares
        return Action.from_levels(levels, offload, shares, self.scenario.ladder.count)

    # --- learning -----------------------------------------------------------

    def update(self) -> float | None:
        """One critic + actor + target update from a replay minibatch.

        Skipped (returns None) until the memory holds a warm-up's worth of
        transitions.  Raises RuntimeError if the loss or gradients go
        non-finite, with enough context to debug the divergence.
        """
        if len(self.memory) < self.warmup:
            return None
        cfg = self.cfg
        s, a, r, s2 = self.memory.sample(cfg.minibatch, self.replay_rng)

        a2 = self.target_actor.forward(s2)
        q2 = self.target_critic.forward(np.concatenate([s2, a2], axis=1))
        targets = r[:, None] + cfg.discount * q2

        q, cache = self.critic.forward_cached(np.concatenate([s, a], axis=1))
        err = q - targets
        loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            raise RuntimeError(
                f"critic loss is not finite ({loss}); |q|max={np.abs(q).max()}, "
                f"|target|max={np.abs(targets).max()}, step={self.critic_opt.t}"
            )
        critic_grads, _ = self.critic.backward(cache, 2.0 * err / cfg.minibatch)
        self.critic_opt.step(self.critic.parameters(), critic_grads)

        mu, actor_cache = self.actor.forward_cached(s)
        _, critic_cache = self.critic.forward_cached(np.concatenate([s, mu], axis=1))
        _, d_input = self.critic.backward(critic_cache, np.full((cfg.minibatch, 1), 1.0 / cfg.minibatch))
        d_action = d_input[:, self.state_dim:]
        actor_grads, _ = self.actor.backward(actor_cache, -d_action)  # descend on -Q
        grad_norm = sum(float(np.sum(g * g)) for g in actor_grads)
        if not np.isfinite(grad_norm):
            raise RuntimeError(
                f"actor gradient is not finite (sq-norm {grad_norm}) at step {self.actor_opt.t}"
            )
        self.actor_opt.step(self.actor.parameters(), actor_grads)

        soft_update(self.target_actor, self.actor, cfg.soft_update)
        soft_update(self.target_critic, self.critic, cfg.soft_update)
        return loss

    def train_episode(self, env: Environment, sink=None) -> EpisodeMetrics:
        """Run one exploration episode, learning after every slot.

        ``sink(report, next_state)`` is invoked per slot when given, letting
        the harness log rows without a second loop here.
        """
        state = env.reset()
        slots = self.cfg.slots_per_episode
        delays = np.zeros(slots)
        rewards = np.zeros(slots)
        accuracy = np.zeros((slots, self.scenario.service_count))
        for t in range(slots):
            features = encode_state(state, self.scenario)
            u, action = self.act(state, explore=True)
            report, state = env.step(action)
            self.memory.push(features, u, report.reward, encode_state(state, self.scenario))
            self.update()
            delays[t] = report.total_delay
            rewards[t] = report.reward
            accuracy[t] = report.accuracy
            if sink is not None:
                sink(report, state)
        return EpisodeMetrics(
            mean_delay=float(delays.mean()),
            mean_reward=float(rewards.mean()),
            mean_accuracy=accuracy.mean(axis=0),
            final_deficit=state.deficit.copy(),
        )


class LearnedPolicy:
    """Evaluation-time wrapper: deterministic actor, optional fixed allocation."""

    def __init__(self, agent: DdpgAgent, allocation_shares: np.ndarray | None = None):
        self.agent = agent
        self.allocation_shares = allocation_shares

    def act(self, state: NetworkState) -> Action:
        _, action = self.agent.act(state, explore=False,
                                   allocation_shares=self.allocation_shares)
        return action


# --- checkpointing ------------------------------------------------------------
#
# Layout: magic, u32 version, u64 header length, UTF-8 JSON header, then the
# raw little-endian float64 buffers of every array in header order.  The
# header carries shapes, the agent hyperparameters, optimizer step counters,
# and the exact bit-generator states, so a round-trip is byte-identical.


def _array_table(agent: DdpgAgent) -> list[tuple[str, np.ndarray]]:
    table = []
    for net_name, net in (("actor", agent.actor), ("critic", agent.critic),
                          ("target_actor", agent.target_actor),
                          ("target_critic", agent.target_critic)):
        for i, p in enumerate(net.parameters()):
            table.append((f"{net_name}.p{i}", p))
    for opt_name, opt in (("actor_opt", agent.actor_opt), ("critic_opt", agent.critic_opt)):
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            table.append((f"{opt_name}.m{i}", m))
            table.append((f"{opt_name}.v{i}", v))
    return table


def save_checkpoint(agent: DdpgAgent, path: str | Path) -> None:
    table = _array_table(agent)
    header = {
        "version": CHECKPOINT_VERSION,
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "hidden_sizes": list(HIDDEN_SIZES),
        "agent_config": asdict(agent.cfg),
        "steps": {"actor": agent.actor_opt.t, "critic": agent.critic_opt.t},
        "rng": {
            "noise": agent.noise_rng.bit_generator.state,
            "replay": agent.replay_rng.bit_generator.state,
        },
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in table],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint64(len(blob)).tobytes())
        fh.write(blob)
        for _, arr in table:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path, scenario: ScenarioConfig) -> DdpgAgent:
    """Rebuild an agent from a checkpoint; the replay memory starts empty."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version = int(np.frombuffer(raw[4:8], dtype=np.uint32)[0])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header_len = int(np.frombuffer(raw[8:16], dtype=np.uint64)[0])
    header = json.loads(raw[16:16 + header_len].decode())

    agent = DdpgAgent(scenario, seed=0)
    if header["state_dim"] != agent.state_dim or header["action_dim"] != agent.action_dim:
        raise ValueError(
            f"{path}: checkpoint dims (state {header['state_dim']}, action "
            f"{header['action_dim']}) do not match the scenario "
            f"(state {agent.state_dim}, action {agent.action_dim})"
        )
    table = _array_table(agent)
    if [name for name, _ in table] != [a["name"] for a in header["arrays"]]:
        raise ValueError(f"{path}: checkpoint array layout does not match this build")
    offset = 16 + header_len
    for (name, arr), meta in zip(table, header["arrays"]):
        shape = tuple(meta["shape"])
        if arr.shape != shape:
            raise ValueError(f"{path}: array {name} has shape {shape}, expected {arr.shape}")
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arr[...] = values.reshape(shape)
        offset += count * 8
    agent.actor_opt.t = int(header["steps"]["actor"])
    agent.critic_opt.t = int(header["steps"]["critic"])
    agent.noise_rng.bit_generator.state = header["rng"]["noise"]
    agent.replay_rng.bit_generator.state = header["rng"]["replay"]
    return agent
