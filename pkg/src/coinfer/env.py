"""Time-slotted network environment: radio, arrivals, queues, delays, accuracy.

All per-slot quantities follow an analytic model: a task's delay components
are computed from the queue backlogs at the start of the slot and may exceed
the slot length (the excess shows up again as backlog next slot).  Queues are
real-valued bits.  Every random draw comes from generator streams owned by
:class:`Environment`, derived from a single seed, so trajectories are exactly
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lyapunov
from .allocator import ALLOCATION_FLOOR
from .config import ChannelModel, ConfigError, DeviceSpec, RadioConfig, ScenarioConfig, ServiceSpec

# Column order of StepReport.delay_components.
DELAY_COMPONENTS = ("local", "offload", "edge_processing", "edge_queue", "edge_wait")


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def tx_rate(radio: RadioConfig, gain_db: float) -> float:
    """Uplink rate in bits/second for one device at the given channel gain.

    The device transmits over an equal split of the system bandwidth; the
    noise power scales with that same sub-band, so the rate is the sub-band
    times the spectral efficiency ``log2(1 + snr)``.
    """
    band = radio.bandwidth_hz / radio.device_share_count
    noise_w = dbm_to_watts(radio.noise_density_dbm_hz) * band
    signal_w = dbm_to_watts(radio.tx_power_dbm) * db_to_linear(gain_db)
    snr = signal_w / (db_to_linear(radio.noise_figure_db) * noise_w)
    return band * np.log2(1.0 + snr)


def sample_channel(channel: ChannelModel, state: int | str, rng: np.random.Generator) -> int:
    """Draw the next channel state index from the transition row of ``state``."""
    if isinstance(state, str):
        state = channel.state_index(state)
    if not 0 <= state < len(channel.states):
        raise ConfigError(f"channel state index {state} out of range")
    row = channel.transition[state]
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(row), u, side="right"), len(row) - 1))


def sample_arrivals(device: DeviceSpec, service: ServiceSpec, rng: np.random.Generator) -> float:
    """Raw task bits generated by a device in one slot.

    The per-slot request rate is uniform on ``mean +/- 0.5`` requests/second,
    clamped at zero, and scales the service's raw task size.
    """
    rate = rng.uniform(device.mean_arrival_rate - 0.5, device.mean_arrival_rate + 0.5)
    return max(rate, 0.0) * service.raw_task_bits


def task_bits(sampling_onehot, raw_bits: float) -> float:
    """Bits of the task after sampling-rate selection: ``raw * k / K``.

    ``sampling_onehot`` must select exactly one of the K levels.
    """
    x = np.asarray(sampling_onehot)
    if x.ndim != 1 or not np.isin(x, (0, 1)).all() or x.sum() != 1:
        raise ValueError(f"sampling vector must be one-hot, got {x!r}")
    k = int(np.argmax(x)) + 1
    return raw_bits * k / x.size


def local_delay(offload_bit: int, cycles_per_bit: float, backlog_bits: float,
                bits: float, cpu_hz: float) -> float:
    """Queueing-plus-processing delay of a locally executed task."""
    return offload_bit * cycles_per_bit * (backlog_bits + bits) / cpu_hz


def update_local_queue(backlog_bits: float, offload_bit: int, bits: float,
                       cpu_hz: float, cycles_per_bit: float, slot_seconds: float,
                       cap_bits: float) -> tuple[float, float]:
    """One-slot local-queue update; returns ``(new_backlog, dropped_bits)``."""
    drained = backlog_bits + offload_bit * bits - cpu_hz * slot_seconds / cycles_per_bit
    new = min(max(drained, 0.0), cap_bits)
    dropped = max(drained - cap_bits, 0.0)
    return new, dropped


def offload_delay(offload_bit: int, bits: float, rate: float) -> float:
    """Uplink transfer delay of an offloaded task."""
    return (1 - offload_bit) * bits / rate


def update_edge_queue(backlog_bits: float, arrived_bits: float, share: float,
                      edge_cpu_hz: float, cycles_per_bit: float, slot_seconds: float,
                      cap_bits: float) -> tuple[float, float]:
    """One-slot edge-queue update; returns ``(new_backlog, dropped_bits)``."""
    drained = backlog_bits + arrived_bits - share * edge_cpu_hz * slot_seconds / cycles_per_bit
    new = min(max(drained, 0.0), cap_bits)
    dropped = max(drained - cap_bits, 0.0)
    return new, dropped


def total_delay(components, local_drops, edge_drops, overflow_penalty: float) -> float:
    """Slot delay: all per-device components plus a fixed penalty per overflow."""
    overflows = int(np.count_nonzero(np.asarray(local_drops) > 0))
    overflows += int(np.count_nonzero(np.asarray(edge_drops) > 0))
    return float(np.sum(components)) + overflow_penalty * overflows


def service_accuracy(levels, offload, scenario: ScenarioConfig) -> np.ndarray:
    """Mean inference accuracy per service for the chosen levels and placement.

    Each device contributes the ladder accuracy of its level times the
    accuracy of the model that runs it (compressed locally, uncompressed at
    the edge); devices with no fresh arrivals still count.
    """
    levels = np.asarray(levels, dtype=np.intp)
    offload = np.asarray(offload, dtype=float)
    per_device = scenario.ladder_levels[levels] * (
        offload * scenario.dev_acc_compressed
        + (1.0 - offload) * scenario.dev_acc_uncompressed
    )
    sums = np.bincount(scenario.dev_service, weights=per_device,
                       minlength=scenario.service_count)
    return sums / scenario.svc_device_count


@dataclass
class Action:
    """Joint control for one slot.

    ``sampling`` is an ``(N, K)`` one-hot matrix over sampling levels;
    ``offload[n] = 0`` sends device ``n``'s task to the edge, ``1`` keeps it
    local; ``allocation`` holds the per-service edge compute shares.
    """

    sampling: np.ndarray
    offload: np.ndarray
    allocation: np.ndarray

    @classmethod
    def from_levels(cls, levels, offload, allocation, level_count: int) -> "Action":
        levels = np.asarray(levels, dtype=np.intp)
        onehot = np.zeros((levels.size, level_count), dtype=np.intp)
        onehot[np.arange(levels.size), levels] = 1
        return cls(
            sampling=onehot,
            offload=np.asarray(offload, dtype=np.intp).copy(),
            allocation=np.asarray(allocation, dtype=float).copy(),
        )

    def levels(self) -> np.ndarray:
        return np.argmax(self.sampling, axis=1)

    def validate(self, scenario: ScenarioConfig) -> None:
        n, m, k = scenario.device_count, scenario.service_count, scenario.ladder.count
        if self.sampling.shape != (n, k):
            raise ValueError(f"sampling must have shape {(n, k)}, got {self.sampling.shape}")
        if not np.isin(self.sampling, (0, 1)).all() or not (self.sampling.sum(axis=1) == 1).all():
            raise ValueError("sampling rows must be one-hot")
        if self.offload.shape != (n,) or not np.isin(self.offload, (0, 1)).all():
            raise ValueError("offload must be a length-N vector of {0, 1}")
        if self.allocation.shape != (m,):
            raise ValueError(f"allocation must have shape {(m,)}, got {self.allocation.shape}")
        if (self.allocation < 0).any() or (self.allocation > 1).any():
            raise ValueError("allocation shares must lie in [0, 1]")
        if self.allocation.sum() > 1.0 + 1e-9:
            raise ValueError(f"allocation shares sum to {self.allocation.sum()} > 1")


@dataclass
class NetworkState:
    """Observable network state at the start of a slot."""

    local_backlog_bits: np.ndarray
    edge_backlog_bits: np.ndarray
    channel: np.ndarray
    arrival_bits: np.ndarray
    deficit: np.ndarray

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.local_backlog_bits.copy(),
            self.edge_backlog_bits.copy(),
            self.channel.copy(),
            self.arrival_bits.copy(),
            self.deficit.copy(),
        )


@dataclass
class SlotOutcome:
    """Deterministic consequences of applying an action to a state."""

    delay_components: np.ndarray  # (N, 5), columns per DELAY_COMPONENTS
    total_delay: float
    accuracy: np.ndarray
    local_overflow_bits: np.ndarray
    edge_overflow_bits: np.ndarray
    new_local_backlog: np.ndarray
    new_edge_backlog: np.ndarray
    floored_services: tuple[int, ...]


@dataclass
class StepReport:
    """Everything observable about one executed slot.

    ``drift_margin`` is a per-service diagnostic: the analytic drift bound
    minus the realized one-slot drift of the deficit potential.  The bound
    holds for any feasible accuracy, so a negative margin indicates a bug.
    """

    delay_components: np.ndarray
    total_delay: float
    accuracy: np.ndarray
    local_overflow_bits: np.ndarray
    edge_overflow_bits: np.ndarray
    floored_services: tuple[int, ...]
    reward: float
    drift_margin: np.ndarray


def evaluate_action(scenario: ScenarioConfig, state: NetworkState, action: Action) -> SlotOutcome:
    """Compute delays, accuracy, and queue updates for one slot (no RNG).

    Pure in ``state``; the queue updates are returned, not applied.  Edge
    queueing and waiting delay are charged only to devices that offload this
    slot.  A service given a zero share while it has offered load or backlog
    has its delay computed at :data:`ALLOCATION_FLOOR` instead and is
    reported in ``floored_services``; the queue itself drains at the true
    (zero) rate.
    """
    n, m = scenario.device_count, scenario.service_count
    svc = scenario.dev_service
    levels = action.levels()
    local = action.offload.astype(float)  # 1 = process locally
    remote = 1.0 - local

    fractions = (levels + 1.0) / scenario.ladder.count
    bits = state.arrival_bits * fractions
    off_bits = remote * bits
    svc_off_bits = np.bincount(svc, weights=off_bits, minlength=m)

    gains = scenario.channel.gain_db[state.channel]
    band = scenario.radio.bandwidth_hz / scenario.radio.device_share_count
    noise_w = dbm_to_watts(scenario.radio.noise_density_dbm_hz) * band
    snr = (dbm_to_watts(scenario.radio.tx_power_dbm) * 10.0 ** (gains / 10.0)) / (
        db_to_linear(scenario.radio.noise_figure_db) * noise_w
    )
    rates = band * np.log2(1.0 + snr)

    d_local = local * scenario.dev_cycles_compressed * (state.local_backlog_bits + bits) / scenario.dev_cpu_hz
    d_offload = remote * bits / rates

    loaded = (svc_off_bits > 0) | (state.edge_backlog_bits > 0)
    starved = loaded & (action.allocation < ALLOCATION_FLOOR)
    effective = np.where(starved, ALLOCATION_FLOOR, action.allocation)
    svc_cycles_rate = effective * scenario.edge_cpu_hz  # cycles/second for delays
    dev_rate = svc_cycles_rate[svc]
    eta_u = scenario.dev_cycles_uncompressed

    d_proc = np.divide(eta_u * off_bits, dev_rate,
                       out=np.zeros(n), where=dev_rate > 0)
    d_queue = remote * np.divide(eta_u * state.edge_backlog_bits[svc], dev_rate,
                                 out=np.zeros(n), where=dev_rate > 0)
    other_bits = svc_off_bits[svc] - off_bits
    d_wait = remote * np.divide(eta_u * other_bits, 2.0 * dev_rate,
                                out=np.zeros(n), where=dev_rate > 0)

    local_pre = (state.local_backlog_bits + local * bits
                 - scenario.dev_cpu_hz * scenario.slot_seconds / scenario.dev_cycles_compressed)
    new_local = np.clip(local_pre, 0.0, scenario.dev_local_cap)
    local_drop = np.maximum(local_pre - scenario.dev_local_cap, 0.0)

    edge_pre = (state.edge_backlog_bits + svc_off_bits
                - action.allocation * scenario.edge_cpu_hz * scenario.slot_seconds
                / scenario.svc_cycles_uncompressed)
    new_edge = np.clip(edge_pre, 0.0, scenario.svc_edge_cap)
    edge_drop = np.maximum(edge_pre - scenario.svc_edge_cap, 0.0)

    components = np.column_stack([d_local, d_offload, d_proc, d_queue, d_wait])
    delay = total_delay(components, local_drop, edge_drop, scenario.overflow_penalty)
    accuracy = service_accuracy(levels, action.offload, scenario)

    return SlotOutcome(
        delay_components=components,
        total_delay=delay,
        accuracy=accuracy,
        local_overflow_bits=local_drop,
        edge_overflow_bits=edge_drop,
        new_local_backlog=new_local,
        new_edge_backlog=new_edge,
        floored_services=tuple(np.nonzero(starved)[0].tolist()),
    )


class Environment:
    """Seed-driven stepping of the network model.

    Channel evolution, arrivals, and episode resets each draw from their own
    stream spawned from the supplied seed, so two environments built with the
    same (scenario, seed) produce bit-identical trajectories under the same
    action sequence.  Instances are single-threaded; run independent seeds in
    parallel processes instead of sharing one.
    """

    def __init__(self, scenario: ScenarioConfig, seed):
        self.scenario = scenario
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        channel_ss, arrival_ss, reset_ss = ss.spawn(3)
        self._channel_rng = np.random.default_rng(channel_ss)
        self._arrival_rng = np.random.default_rng(arrival_ss)
        self._reset_rng = np.random.default_rng(reset_ss)
        self._tracker = lyapunov.DeficitTracker(
            scenario.svc_threshold, scenario.svc_min_accuracy, scenario.tradeoff_weight
        )
        self.state: NetworkState | None = None

    def reset(self) -> NetworkState:
        """Zero queues and deficits, redraw channels from the stationary law."""
        sc = self.scenario
        pi = sc.channel.stationary()
        u = self._reset_rng.random(sc.device_count)
        channels = np.minimum(
            np.searchsorted(np.cumsum(pi), u, side="right"), len(pi) - 1
        ).astype(np.intp)
        self._tracker.reset()
        self.state = NetworkState(
            local_backlog_bits=np.zeros(sc.device_count),
            edge_backlog_bits=np.zeros(sc.service_count),
            channel=channels,
            arrival_bits=self._draw_arrivals(),
            deficit=self._tracker.deficits.copy(),
        )
        return self.state

    def step(self, action: Action) -> tuple[StepReport, NetworkState]:
        """Apply one joint action; returns the report and the next state."""
        if self.state is None:
            raise RuntimeError("environment must be reset before stepping")
        sc = self.scenario
        action.validate(sc)
        outcome = evaluate_action(sc, self.state, action)
        reward = self._tracker.reward(outcome.total_delay, outcome.accuracy)
        before = self._tracker.deficits
        margins = np.empty(sc.service_count)
        for m in range(sc.service_count):
            drift, bound, _ = lyapunov.drift_bound(
                float(before[m]), float(outcome.accuracy[m]),
                float(sc.svc_threshold[m]), float(sc.svc_drift_constant[m]))
            margins[m] = bound - drift
        deficits = self._tracker.advance(outcome.accuracy)

        rows = sc.channel.transition[self.state.channel]
        u = self._channel_rng.random(sc.device_count)
        next_channel = np.minimum(
            (u[:, None] >= np.cumsum(rows, axis=1)).sum(axis=1),
            len(sc.channel.states) - 1,
        ).astype(np.intp)

        self.state = NetworkState(
            local_backlog_bits=outcome.new_local_backlog,
            edge_backlog_bits=outcome.new_edge_backlog,
            channel=next_channel,
            arrival_bits=self._draw_arrivals(),
            deficit=deficits.copy(),
        )
        report = StepReport(
            delay_components=outcome.delay_components,
            total_delay=outcome.total_delay,
            accuracy=outcome.accuracy,
            local_overflow_bits=outcome.local_overflow_bits,
            edge_overflow_bits=outcome.edge_overflow_bits,
            floored_services=outcome.floored_services,
            reward=reward,
            drift_margin=margins,
        )
        return report, self.state

    def _draw_arrivals(self) -> np.ndarray:
        sc = self.scenario
        rates = self._arrival_rng.uniform(
            sc.dev_arrival_rate - 0.5, sc.dev_arrival_rate + 0.5
        )
        return np.maximum(rates, 0.0) * sc.dev_raw_bits
