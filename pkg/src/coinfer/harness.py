"""Experiment orchestration: seeded runs, CSV persistence, verification suites.

A run is fully determined by (scenario, seed): the master seed spawns
separate streams for the environment (channel, arrivals, resets) and the
learner (initialization, exploration, replay sampling), so two policies
evaluated at the same seed see identical environment draws.

CSV layout (floats use ``repr`` so parsing them back is lossless):

* ``slots.csv``   -- slot, episode, per-service accuracy, deficit and edge
  backlog (end of slot), total delay, the five per-component delay sums,
  overflow counts, reward.
* ``episodes.csv`` -- per-episode means plus final deficits over slots.
* ``summary.csv`` -- one row per run: time-averaged delay/accuracy with 95%
  confidence half-widths, constraint-violation rate, mean deficit rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lyapunov
from .agent import (DdpgAgent, LearnedPolicy, feature_size, load_checkpoint,
                    save_checkpoint)
from .allocator import equivalence_sweep
from .baselines import MyopicPolicy, StaticPolicy, fixed_allocation
from .config import ScenarioConfig
from .env import Action, Environment, NetworkState, StepReport, evaluate_action
from .nets import Mlp

DEFAULT_EVAL_EPISODES = 50


# --- CSV plumbing -------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class CsvWriter:
    """Line-buffered CSV writer with deterministic float formatting."""

    def __init__(self, path: Path, header: list[str]):
        self._fh = open(path, "w", buffering=1)
        self._fh.write(",".join(header) + "\n")

    def row(self, values) -> None:
        self._fh.write(",".join(_fmt(v) for v in values) + "\n")

    def close(self) -> None:
        self._fh.close()


def slot_header(scenario: ScenarioConfig) -> list[str]:
    m = scenario.service_count
    return (["slot", "episode"]
            + [f"accuracy_{i}" for i in range(m)]
            + [f"deficit_{i}" for i in range(m)]
            + [f"edge_backlog_{i}" for i in range(m)]
            + ["total_delay", "delay_local", "delay_offload", "delay_edge_processing",
               "delay_edge_queue", "delay_edge_wait",
               "local_overflows", "edge_overflows", "reward"]
            + [f"drift_margin_{i}" for i in range(m)])


def slot_row(slot: int, episode: int, report: StepReport, state: NetworkState) -> list:
    sums = report.delay_components.sum(axis=0)
    return ([slot, episode]
            + list(report.accuracy)
            + list(state.deficit)
            + list(state.edge_backlog_bits)
            + [report.total_delay, *sums,
               int(np.count_nonzero(report.local_overflow_bits > 0)),
               int(np.count_nonzero(report.edge_overflow_bits > 0)),
               report.reward]
            + list(report.drift_margin))


def episode_header(scenario: ScenarioConfig) -> list[str]:
    m = scenario.service_count
    return (["episode", "mean_delay", "mean_reward"]
            + [f"mean_accuracy_{i}" for i in range(m)]
            + [f"deficit_rate_{i}" for i in range(m)]
            + ["local_overflow_slots", "edge_overflow_slots"])


def summary_header(scenario: ScenarioConfig) -> list[str]:
    m = scenario.service_count
    return (["policy", "episodes", "slots_per_episode",
             "mean_delay", "delay_ci95", "mean_reward", "reward_ci95"]
            + [f"mean_accuracy_{i}" for i in range(m)]
            + [f"accuracy_ci95_{i}" for i in range(m)]
            + [f"violation_rate_{i}" for i in range(m)]
            + [f"deficit_rate_{i}" for i in range(m)])


# --- results ------------------------------------------------------------------


@dataclass
class EpisodeRecord:
    episode: int
    mean_delay: float
    mean_reward: float
    mean_accuracy: np.ndarray
    deficit_rate: np.ndarray  # final deficit / slots
    local_overflow_slots: int
    edge_overflow_slots: int


@dataclass
class ExperimentResult:
    """Aggregated outcome of a training or evaluation run."""

    policy: str
    episodes: list[EpisodeRecord]
    slots_per_episode: int
    summary: dict = field(default_factory=dict)

    def finalize(self) -> "ExperimentResult":
        delays = np.array([e.mean_delay for e in self.episodes])
        rewards = np.array([e.mean_reward for e in self.episodes])
        acc = np.vstack([e.mean_accuracy for e in self.episodes])
        deficit = np.vstack([e.deficit_rate for e in self.episodes])
        self.summary = {
            "policy": self.policy,
            "episodes": len(self.episodes),
            "slots_per_episode": self.slots_per_episode,
            "mean_delay": float(delays.mean()),
            "delay_ci95": _ci95(delays),
            "mean_reward": float(rewards.mean()),
            "reward_ci95": _ci95(rewards),
            "mean_accuracy": acc.mean(axis=0),
            "accuracy_ci95": np.array([_ci95(acc[:, j]) for j in range(acc.shape[1])]),
            "deficit_rate": deficit.mean(axis=0),
            "_accuracy_rows": acc,
        }
        return self

    def violation_rates(self, thresholds) -> np.ndarray:
        acc = self.summary["_accuracy_rows"]
        return (acc < np.asarray(thresholds)).mean(axis=0)


def _ci95(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / np.sqrt(values.size))


def _write_summary(result: ExperimentResult, scenario: ScenarioConfig, out: Path) -> None:
    s = result.summary
    writer = CsvWriter(out / "summary.csv", summary_header(scenario))
    try:
        writer.row([s["policy"], s["episodes"], s["slots_per_episode"],
                    s["mean_delay"], s["delay_ci95"], s["mean_reward"], s["reward_ci95"]]
                   + list(s["mean_accuracy"])
                   + list(s["accuracy_ci95"])
                   + list(result.violation_rates(scenario.svc_threshold))
                   + list(s["deficit_rate"]))
    finally:
        writer.close()


# --- training / evaluation ----------------------------------------------------


def run_training(scenario: ScenarioConfig, seed: int,
                 out_dir: str | Path | None = None) -> tuple[ExperimentResult, DdpgAgent]:
    """Train a fresh agent for the configured episodes; optionally persist.

    Writes ``slots.csv`` incrementally (so partial results survive an abort),
    then ``episodes.csv``, ``summary.csv``, and ``checkpoint.bin``.
    """
    master = np.random.SeedSequence(seed)
    env_ss, agent_ss = master.spawn(2)
    env = Environment(scenario, env_ss)
    agent = DdpgAgent(scenario, agent_ss)

    out = Path(out_dir) if out_dir is not None else None
    slot_writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        slot_writer = CsvWriter(out / "slots.csv", slot_header(scenario))

    result = ExperimentResult(policy="proposed", episodes=[],
                              slots_per_episode=scenario.agent.slots_per_episode)
    try:
        for episode in range(scenario.agent.episodes):
            counters = {"slot": 0, "local": 0, "edge": 0}

            def sink(report: StepReport, state: NetworkState,
                     episode=episode, counters=counters) -> None:
                if slot_writer is not None:
                    slot_writer.row(slot_row(counters["slot"], episode, report, state))
                counters["slot"] += 1
                counters["local"] += int((report.local_overflow_bits > 0).any())
                counters["edge"] += int((report.edge_overflow_bits > 0).any())

            metrics = agent.train_episode(env, sink=sink)
            result.episodes.append(EpisodeRecord(
                episode=episode,
                mean_delay=metrics.mean_delay,
                mean_reward=metrics.mean_reward,
                mean_accuracy=metrics.mean_accuracy,
                deficit_rate=metrics.final_deficit / scenario.agent.slots_per_episode,
                local_overflow_slots=counters["local"],
                edge_overflow_slots=counters["edge"],
            ))
    finally:
        if slot_writer is not None:
            slot_writer.close()

    result.finalize()
    if out is not None:
        _write_episode_csv(result, scenario, out)
        _write_summary(result, scenario, out)
        save_checkpoint(agent, out / "checkpoint.bin")
    return result, agent


def _write_episode_csv(result: ExperimentResult, scenario: ScenarioConfig, out: Path) -> None:
    writer = CsvWriter(out / "episodes.csv", episode_header(scenario))
    try:
        for e in result.episodes:
            writer.row([e.episode, e.mean_delay, e.mean_reward]
                       + list(e.mean_accuracy) + list(e.deficit_rate)
                       + [e.local_overflow_slots, e.edge_overflow_slots])
    finally:
        writer.close()


def run_evaluation(scenario: ScenarioConfig, policy, seed: int,
                   episodes: int = DEFAULT_EVAL_EPISODES,
                   out_dir: str | Path | None = None,
                   policy_name: str = "policy") -> ExperimentResult:
    """Roll out a fixed policy (no exploration, no learning) over fresh episodes.

    The environment seeds mirror :func:`run_training`'s derivation, so
    different policies evaluated at the same seed face identical channel and
    arrival draws.
    """
    master = np.random.SeedSequence(seed)
    env_ss, _ = master.spawn(2)
    env = Environment(scenario, env_ss)
    slots = scenario.agent.slots_per_episode

    out = Path(out_dir) if out_dir is not None else None
    slot_writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        slot_writer = CsvWriter(out / "slots.csv", slot_header(scenario))

    result = ExperimentResult(policy=policy_name, episodes=[], slots_per_episode=slots)
    try:
        for episode in range(episodes):
            state = env.reset()
            delays = np.zeros(slots)
            rewards = np.zeros(slots)
            accuracy = np.zeros((slots, scenario.service_count))
            local_slots = 0
            edge_slots = 0
            for t in range(slots):
                action = policy.act(state)
                report, state = env.step(action)
                delays[t] = report.total_delay
                rewards[t] = report.reward
                accuracy[t] = report.accuracy
                local_slots += int((report.local_overflow_bits > 0).any())
                edge_slots += int((report.edge_overflow_bits > 0).any())
                if slot_writer is not None:
                    slot_writer.row(slot_row(t, episode, report, state))
            result.episodes.append(EpisodeRecord(
                episode=episode,
                mean_delay=float(delays.mean()),
                mean_reward=float(rewards.mean()),
                mean_accuracy=accuracy.mean(axis=0),
                deficit_rate=state.deficit / slots,
                local_overflow_slots=local_slots,
                edge_overflow_slots=edge_slots,
            ))
    finally:
        if slot_writer is not None:
            slot_writer.close()

    result.finalize()
    if out is not None:
        _write_episode_csv(result, scenario, out)
        _write_summary(result, scenario, out)
    return result


def build_policy(name: str, scenario: ScenarioConfig,
                 checkpoint: str | Path | None = None):
    """Resolve a policy by CLI name; learned variants need a checkpoint path."""
    if name == "static":
        return StaticPolicy(scenario)
    if name == "myopic":
        return MyopicPolicy(scenario)
    if name in ("proposed", "proposed-fixed"):
        if checkpoint is None:
            raise ValueError(f"policy '{name}' requires a checkpoint")
        agent = load_checkpoint(checkpoint, scenario)
        shares = fixed_allocation(scenario) if name == "proposed-fixed" else None
        return LearnedPolicy(agent, allocation_shares=shares)
    raise ValueError(f"unknown policy '{name}' "
                     "(choose from proposed, proposed-fixed, myopic, static)")


# --- randomized property checks (shared by `verify` and the test suite) --------


def random_state(scenario: ScenarioConfig, rng: np.random.Generator) -> NetworkState:
    n, m = scenario.device_count, scenario.service_count
    rates = np.maximum(rng.uniform(scenario.dev_arrival_rate - 0.5,
                                   scenario.dev_arrival_rate + 0.5), 0.0)
    return NetworkState(
        local_backlog_bits=rng.uniform(0.0, scenario.dev_local_cap),
        edge_backlog_bits=rng.uniform(0.0, scenario.svc_edge_cap),
        channel=rng.integers(0, len(scenario.channel.states), size=n).astype(np.intp),
        arrival_bits=rates * scenario.dev_raw_bits,
        deficit=rng.uniform(0.0, 3.0, size=m),
    )


def random_action(scenario: ScenarioConfig, rng: np.random.Generator) -> Action:
    n, m = scenario.device_count, scenario.service_count
    levels = rng.integers(0, scenario.ladder.count, size=n)
    offload = rng.integers(0, 2, size=n)
    raw = rng.random(m) + 1e-9
    shares = raw / raw.sum() * rng.random()
    return Action.from_levels(levels, offload, shares, scenario.ladder.count)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def verify(scenario: ScenarioConfig, seed: int = 0) -> list[CheckResult]:
    """Run every property suite; each failure names the offending instance."""
    checks = [
        _check_allocator,
        _check_drift_bound,
        _check_gradients,
        _check_queue_properties,
        _check_accuracy_monotonicity,
        _check_channel_stationarity,
    ]
    return [check(scenario, seed) for check in checks]


def _check_allocator(scenario: ScenarioConfig, seed: int) -> CheckResult:
    report = equivalence_sweep(instances=1000, max_services=5, seed=seed)
    ok = report["max_component_gap"] < 1e-5 and report["max_kkt_spread"] < 1e-9
    return CheckResult(
        "allocator_oracle_equivalence", ok,
        f"max component gap {report['max_component_gap']:.3e}, "
        f"max KKT spread {report['max_kkt_spread']:.3e} over {report['instances']} instances",
    )


def _check_drift_bound(scenario: ScenarioConfig, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    draws = 10_000
    for m in range(scenario.service_count):
        threshold = scenario.svc_threshold[m]
        minimum = scenario.svc_min_accuracy[m]
        constant = scenario.svc_drift_constant[m]
        deficits = rng.uniform(0.0, 10.0, size=draws)
        accuracies = rng.uniform(minimum, 1.0, size=draws)
        for z, a in zip(deficits, accuracies):
            drift, bound, holds = lyapunov.drift_bound(z, a, threshold, constant, minimum)
            if not holds:
                return CheckResult(
                    "drift_bound", False,
                    f"violated for service {m}: deficit={z!r}, accuracy={a!r}, "
                    f"drift={drift!r} > bound={bound!r}",
                )
    return CheckResult("drift_bound", True,
                       f"{draws} draws per service, all within tolerance")


def _finite_difference_check(net: Mlp, x: np.ndarray, seed_grad: np.ndarray,
                             h: float = 1e-5) -> float:
    """Worst relative error between backprop and central differences.

    The scalar objective is ``sum(net(x) * seed_grad)`` so the backprop seed
    is exactly ``seed_grad``.
    """
    _, caches = net.forward_cached(x)
    grads, _ = net.backward(caches, seed_grad)
    params = net.parameters()
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            original = flat_p[i]
            flat_p[i] = original + h
            up = float(np.sum(net.forward(x) * seed_grad))
            flat_p[i] = original - h
            down = float(np.sum(net.forward(x) * seed_grad))
            flat_p[i] = original
            numeric = (up - down) / (2.0 * h)
            scale = max(abs(numeric), abs(flat_g[i]), 1e-6)
            worst = max(worst, abs(numeric - flat_g[i]) / scale)
    return worst


def _check_gradients(scenario: ScenarioConfig, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for output in ("linear", "tanh"):
        for _ in range(5):
            sizes = [int(rng.integers(3, 7)) for _ in range(4)]
            net = Mlp(sizes, rng, output=output)
            x = rng.normal(size=(6, sizes[0]))
            seed_grad = rng.normal(size=(6, sizes[-1]))
            worst = max(worst, _finite_difference_check(net, x, seed_grad))
    # one pass at the production widths
    sdim = feature_size(scenario)
    adim = 2 * scenario.device_count
    actor = Mlp([sdim, 64, 32, adim], rng, output="tanh", final_scale=3e-3)
    x = rng.normal(size=(4, sdim))
    worst = max(worst, _finite_difference_check(actor, x, rng.normal(size=(4, adim))))
    ok = worst < 1e-4
    return CheckResult("gradient_finite_difference", ok,
                       f"worst relative error {worst:.3e}")


def _check_queue_properties(scenario: ScenarioConfig, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    steps = 10_000
    for i in range(steps):
        state = random_state(scenario, rng)
        action = random_action(scenario, rng)
        out = evaluate_action(scenario, state, action)
        if ((out.new_local_backlog < 0).any()
                or (out.new_local_backlog > scenario.dev_local_cap + 1e-9).any()):
            return CheckResult("queue_properties", False,
                               f"local backlog out of bounds at instance {i}")
        if ((out.new_edge_backlog < 0).any()
                or (out.new_edge_backlog > scenario.svc_edge_cap + 1e-9).any()):
            return CheckResult("queue_properties", False,
                               f"edge backlog out of bounds at instance {i}")
        local_pre = (state.local_backlog_bits + action.offload * state.arrival_bits
                     * (action.levels() + 1.0) / scenario.ladder.count
                     - scenario.dev_cpu_hz * scenario.slot_seconds
                     / scenario.dev_cycles_compressed)
        expected_overflow = local_pre > scenario.dev_local_cap
        if not np.array_equal(expected_overflow, out.local_overflow_bits > 0):
            return CheckResult("queue_properties", False,
                               f"local overflow flag inconsistent at instance {i}")
        recomposed = (out.delay_components.sum()
                      + scenario.overflow_penalty
                      * (np.count_nonzero(out.local_overflow_bits > 0)
                         + np.count_nonzero(out.edge_overflow_bits > 0)))
        if abs(recomposed - out.total_delay) > 1e-9:
            return CheckResult("queue_properties", False,
                               f"delay decomposition off by {recomposed - out.total_delay!r}"
                               f" at instance {i}")
        if (out.delay_components < 0).any():
            return CheckResult("queue_properties", False,
                               f"negative delay component at instance {i}")
        low = scenario.svc_min_accuracy - 1e-12
        high = scenario.ladder_levels[-1] * np.array(
            [s.accuracy_uncompressed for s in scenario.services]) + 1e-12
        if (out.accuracy < low).any() or (out.accuracy > high).any():
            return CheckResult("queue_properties", False,
                               f"accuracy outside achievable range at instance {i}")
    return CheckResult("queue_properties", True, f"{steps} randomized steps clean")


def _check_accuracy_monotonicity(scenario: ScenarioConfig, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    for i in range(300):
        state = random_state(scenario, rng)
        action = random_action(scenario, rng)
        base = evaluate_action(scenario, state, action).accuracy
        n = int(rng.integers(0, scenario.device_count))
        levels = action.levels()
        if levels[n] + 1 < scenario.ladder.count:
            bumped = levels.copy()
            bumped[n] += 1
            up = Action.from_levels(bumped, action.offload, action.allocation,
                                    scenario.ladder.count)
            if (evaluate_action(scenario, state, up).accuracy < base - 1e-12).any():
                return CheckResult("accuracy_monotonicity", False,
                                   f"raising device {n}'s level decreased accuracy (instance {i})")
        if action.offload[n] == 1:
            moved = action.offload.copy()
            moved[n] = 0
            out = Action.from_levels(levels, moved, action.allocation, scenario.ladder.count)
            if (evaluate_action(scenario, state, out).accuracy < base - 1e-12).any():
                return CheckResult("accuracy_monotonicity", False,
                                   f"offloading device {n} decreased accuracy (instance {i})")
    return CheckResult("accuracy_monotonicity", True, "300 randomized perturbations clean")


def _check_channel_stationarity(scenario: ScenarioConfig, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    chain = scenario.channel
    slots = 100_000
    rows_cum = np.cumsum(chain.transition, axis=1)
    state = 0
    counts = np.zeros(len(chain.states))
    draws = rng.random(slots)
    for u in draws:
        counts[state] += 1
        state = int(min(np.searchsorted(rows_cum[state], u, side="right"),
                        len(chain.states) - 1))
    freq = counts / slots
    target = chain.stationary()
    gap = float(np.max(np.abs(freq - target)))
    return CheckResult("channel_stationarity", gap <= 0.01,
                       f"max frequency gap {gap:.4f} over {slots} slots")
