"""Scenario configuration: domain types, validation, defaults, YAML loading.

A scenario file is a YAML mapping.  Every key is optional and falls back to
the built-in defaults (a two-service cell with five devices per service).
The full schema is documented in README.md.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml


class ConfigError(ValueError):
    """A scenario file or override violates a documented constraint."""


_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ServiceSpec:
    """One inference service class: task sizes, compute intensities, accuracy."""

    index: int
    raw_task_bits: float
    cycles_per_bit_compressed: float
    cycles_per_bit_uncompressed: float
    accuracy_compressed: float
    accuracy_uncompressed: float
    accuracy_threshold: float
    edge_queue_cap_bits: float


@dataclass(frozen=True, eq=False)
class DeviceSpec:
    """A single device: owning service, CPU speed, arrival statistics, queue cap."""

    index: int
    service: int
    cpu_hz: float
    mean_arrival_rate: float
    local_queue_cap_bits: float


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """Finite-state Markov channel with per-state gains in dB."""

    states: tuple[str, ...]
    transition: np.ndarray
    gain_db: np.ndarray

    def state_index(self, name: str) -> int:
        try:
            return self.states.index(name)
        except ValueError:
            raise ConfigError(
                f"channel state '{name}' unknown (states: {', '.join(self.states)})"
            ) from None

    def stationary(self) -> np.ndarray:
        """Long-run state distribution, solved from the balance equations."""
        n = len(self.states)
        a = np.vstack([self.transition.T - np.eye(n), np.ones(n)])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()


@dataclass(frozen=True, eq=False)
class RadioConfig:
    """Uplink radio constants; the band is split evenly across devices."""

    bandwidth_hz: float
    tx_power_dbm: float
    noise_figure_db: float
    noise_density_dbm_hz: float
    device_share_count: int


@dataclass(frozen=True, eq=False)
class SamplingLadder:
    """Accuracy attained at each selectable sampling level.

    Level k (0-based) corresponds to the fraction (k + 1) / count of the raw
    sampling rate; ``levels[k]`` is the measured accuracy at that fraction.
    """

    levels: tuple[float, ...]

    @property
    def count(self) -> int:
        return len(self.levels)

    def fraction(self, level: int) -> float:
        return (level + 1) / self.count

    def accuracy(self, level: int) -> float:
        return self.levels[level]


@dataclass(frozen=True, eq=False)
class AgentConfig:
    """Learner hyperparameters."""

    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    discount: float = 0.85
    soft_update: float = 0.005
    noise_std: float = 0.2
    minibatch: int = 64
    replay_capacity: int = 100_000
    episodes: int = 1000
    slots_per_episode: int = 200
    warmup_batches: int = 10


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Fully resolved experiment description.

    Besides the raw specs this exposes flat per-device / per-service numpy
    arrays (cached) so the per-slot math never walks spec objects.
    """

    services: tuple[ServiceSpec, ...]
    devices: tuple[DeviceSpec, ...]
    channel: ChannelModel
    radio: RadioConfig
    ladder: SamplingLadder
    edge_cpu_hz: float
    slot_seconds: float
    overflow_penalty: float
    tradeoff_weight: float
    agent: AgentConfig

    @property
    def device_count(self) -> int:
        return len(self.devices)

    @property
    def service_count(self) -> int:
        return len(self.services)

    def devices_of(self, service: int) -> tuple[int, ...]:
        return tuple(
            d.index for d in self.devices if d.service == service
        )

    # --- flat array views -------------------------------------------------

    @cached_property
    def dev_service(self) -> np.ndarray:
        return _frozen(np.array([d.service for d in self.devices], dtype=np.intp))

    @cached_property
    def dev_cpu_hz(self) -> np.ndarray:
        return _frozen(np.array([d.cpu_hz for d in self.devices]))

    @cached_property
    def dev_arrival_rate(self) -> np.ndarray:
        return _frozen(np.array([d.mean_arrival_rate for d in self.devices]))

    @cached_property
    def dev_local_cap(self) -> np.ndarray:
        return _frozen(np.array([d.local_queue_cap_bits for d in self.devices]))

    @cached_property
    def dev_raw_bits(self) -> np.ndarray:
        return _frozen(
            np.array([self.services[d.service].raw_task_bits for d in self.devices])
        )

    @cached_property
    def dev_cycles_compressed(self) -> np.ndarray:
        return _frozen(
            np.array(
                [self.services[d.service].cycles_per_bit_compressed for d in self.devices]
            )
        )

    @cached_property
    def dev_cycles_uncompressed(self) -> np.ndarray:
        return _frozen(
            np.array(
                [self.services[d.service].cycles_per_bit_uncompressed for d in self.devices]
            )
        )

    @cached_property
    def dev_acc_compressed(self) -> np.ndarray:
        return _frozen(
            np.array([self.services[d.service].accuracy_compressed for d in self.devices])
        )

    @cached_property
    def dev_acc_uncompressed(self) -> np.ndarray:
        return _frozen(
            np.array([self.services[d.service].accuracy_uncompressed for d in self.devices])
        )

    @cached_property
    def svc_threshold(self) -> np.ndarray:
        return _frozen(np.array([s.accuracy_threshold for s in self.services]))

    @cached_property
    def svc_edge_cap(self) -> np.ndarray:
        return _frozen(np.array([s.edge_queue_cap_bits for s in self.services]))

    @cached_property
    def svc_cycles_uncompressed(self) -> np.ndarray:
        return _frozen(np.array([s.cycles_per_bit_uncompressed for s in self.services]))

    @cached_property
    def svc_device_count(self) -> np.ndarray:
        counts = np.bincount(self.dev_service, minlength=self.service_count)
        return _frozen(counts.astype(np.intp))

    @cached_property
    def svc_min_accuracy(self) -> np.ndarray:
        """Least achievable accuracy per service: lowest level on a compressed model."""
        low = self.ladder.levels[0]
        return _frozen(np.array([low * s.accuracy_compressed for s in self.services]))

    @cached_property
    def svc_drift_constant(self) -> np.ndarray:
        gap = self.svc_threshold - self.svc_min_accuracy
        return _frozen(0.5 * gap * gap)

    @cached_property
    def ladder_levels(self) -> np.ndarray:
        return _frozen(np.array(self.ladder.levels))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# --- defaults ---------------------------------------------------------------

_SERVICE_TEMPLATE = {
    "raw_task_bits": 768e3,
    "cycles_per_bit_compressed": 80.0,
    "cycles_per_bit_uncompressed": 200.0,
    "accuracy_compressed": 0.8,
    "accuracy_uncompressed": 1.0,
    "accuracy_threshold": 0.8,
    "edge_queue_cap_bits": 19.2e6,
    "device_count": 5,
    "mean_arrival_rate": 0.8,
    "device_cpu_hz": 1.0e8,
    "local_queue_cap_bits": 3.84e6,
}

_DEFAULTS = {
    "slot_seconds": 1.0,
    "overflow_penalty": 1.0,
    "tradeoff_weight": 0.05,
    "edge_cpu_hz": 2.0e9,
    "sampling_accuracy": [0.59, 0.884, 0.950, 0.987],
    "radio": {
        "bandwidth_hz": 20e6,
        "tx_power_dbm": 20.0,
        "noise_figure_db": 5.0,
        "noise_density_dbm_hz": -174.0,
        "device_share_count": None,  # None: split across all devices
    },
    "channel": {
        "states": ["good", "normal", "bad"],
        "gain_db": [-95.0, -105.0, -115.0],
        "transition": [
            [0.30, 0.70, 0.00],
            [0.25, 0.50, 0.25],
            [0.00, 0.70, 0.30],
        ],
    },
    "services": [
        dict(_SERVICE_TEMPLATE),
        dict(
            _SERVICE_TEMPLATE,
            raw_task_bits=512e3,
            cycles_per_bit_compressed=160.0,
            cycles_per_bit_uncompressed=400.0,
            accuracy_threshold=0.9,
        ),
    ],
    "agent": {
        "actor_lr": 1e-4,
        "critic_lr": 1e-3,
        "discount": 0.85,
        "soft_update": 0.005,
        "noise_std": 0.2,
        "minibatch": 64,
        "replay_capacity": 100_000,
        "episodes": 1000,
        "slots_per_episode": 200,
        "warmup_batches": 10,
    },
}

_TOP_KEYS = set(_DEFAULTS)
_RADIO_KEYS = set(_DEFAULTS["radio"])
_CHANNEL_KEYS = set(_DEFAULTS["channel"])
_SERVICE_KEYS = set(_SERVICE_TEMPLATE)
_AGENT_KEYS = set(_DEFAULTS["agent"])


def default_dict() -> dict:
    """Deep copy of the built-in scenario mapping (safe to mutate)."""
    return copy.deepcopy(_DEFAULTS)


def default_scenario() -> ScenarioConfig:
    return scenario_from_dict(default_dict())


# --- loading / validation ----------------------------------------------------


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse a YAML scenario file, apply defaults, validate every invariant."""
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping, got {type(raw).__name__}")
    return scenario_from_dict(raw)


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig` from a plain mapping."""
    _check_keys(data, _TOP_KEYS, "scenario")
    merged = default_dict()
    for key in ("slot_seconds", "overflow_penalty", "tradeoff_weight", "edge_cpu_hz",
                "sampling_accuracy"):
        if key in data:
            merged[key] = data[key]
    for key in ("radio", "channel", "agent"):
        if key in data:
            section = data[key]
            if not isinstance(section, dict):
                raise ConfigError(f"{key}: must be a mapping")
            merged[key].update(section)
    if "services" in data:
        if not isinstance(data["services"], list) or not data["services"]:
            raise ConfigError("services: must be a non-empty list")
        merged["services"] = [
            {**_SERVICE_TEMPLATE, **entry} for entry in data["services"]
        ]

    _check_keys(merged["radio"], _RADIO_KEYS, "radio")
    _check_keys(merged["channel"], _CHANNEL_KEYS, "channel")
    _check_keys(merged["agent"], _AGENT_KEYS, "agent")
    for i, entry in enumerate(merged["services"]):
        _check_keys(entry, _SERVICE_KEYS, f"services[{i}]")

    ladder = _build_ladder(merged["sampling_accuracy"])
    channel = _build_channel(merged["channel"])
    services, devices = _build_services(merged["services"], ladder)
    radio = _build_radio(merged["radio"], len(devices))
    agent = _build_agent(merged["agent"])

    slot = _positive(merged["slot_seconds"], "slot_seconds")
    penalty = _positive(merged["overflow_penalty"], "overflow_penalty")
    weight = _positive(merged["tradeoff_weight"], "tradeoff_weight")
    edge_hz = _positive(merged["edge_cpu_hz"], "edge_cpu_hz")

    return ScenarioConfig(
        services=services,
        devices=devices,
        channel=channel,
        radio=radio,
        ladder=ladder,
        edge_cpu_hz=edge_hz,
        slot_seconds=slot,
        overflow_penalty=penalty,
        tradeoff_weight=weight,
        agent=agent,
    )


def _check_keys(mapping: dict, allowed: set, context: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(
                f"{context}: unknown key '{key}' (allowed: {', '.join(sorted(allowed))})"
            )


def _number(value, key: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if not np.isfinite(out):
        raise ConfigError(f"{key}: must be finite, got {value!r}")
    return out


def _positive(value, key: str) -> float:
    out = _number(value, key)
    if out <= 0:
        raise ConfigError(f"{key}: must be > 0, got {out}")
    return out


def _integer(value, key: str, minimum: int = 1) -> int:
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if out != value or out < minimum:
        raise ConfigError(f"{key}: must be an integer >= {minimum}, got {value!r}")
    return out


def _fraction(value, key: str, *, closed_low=False) -> float:
    out = _number(value, key)
    low_ok = out >= 0 if closed_low else out > 0
    if not (low_ok and out <= 1):
        bound = "[0, 1]" if closed_low else "(0, 1]"
        raise ConfigError(f"{key}: must lie in {bound}, got {out}")
    return out


def _build_ladder(levels) -> SamplingLadder:
    if not isinstance(levels, (list, tuple)) or not levels:
        raise ConfigError("sampling_accuracy: must be a non-empty list")
    vals = tuple(_fraction(v, f"sampling_accuracy[{i}]") for i, v in enumerate(levels))
    for i in range(1, len(vals)):
        if vals[i] <= vals[i - 1]:
            raise ConfigError(
                f"sampling_accuracy: must be strictly increasing "
                f"(levels {i - 1} and {i}: {vals[i - 1]} >= {vals[i]})"
            )
    return SamplingLadder(levels=vals)


def _build_channel(section: dict) -> ChannelModel:
    states = section["states"]
    if not isinstance(states, (list, tuple)) or not states:
        raise ConfigError("channel.states: must be a non-empty list of names")
    states = tuple(str(s) for s in states)
    n = len(states)
    gains = np.array(
        [_number(g, f"channel.gain_db[{i}]") for i, g in enumerate(section["gain_db"])]
    )
    if gains.shape != (n,):
        raise ConfigError(
            f"channel.gain_db: expected {n} entries to match states, got {gains.size}"
        )
    matrix = np.array(section["transition"], dtype=float)
    if matrix.shape != (n, n):
        raise ConfigError(
            f"channel.transition: expected a {n}x{n} matrix, got shape {matrix.shape}"
        )
    if (matrix < 0).any():
        raise ConfigError("channel.transition: entries must be >= 0")
    sums = matrix.sum(axis=1)
    for i, s in enumerate(sums):
        if abs(s - 1.0) > _ROW_SUM_TOL:
            raise ConfigError(
                f"channel.transition: row {i} must sum to 1 +/- {_ROW_SUM_TOL}, got {s!r}"
            )
    return ChannelModel(states=states, transition=_frozen(matrix), gain_db=_frozen(gains))


def _build_radio(section: dict, total_devices: int) -> RadioConfig:
    share = section["device_share_count"]
    if share is None:
        share = total_devices
    share = _integer(share, "radio.device_share_count", minimum=1)
    return RadioConfig(
        bandwidth_hz=_positive(section["bandwidth_hz"], "radio.bandwidth_hz"),
        tx_power_dbm=_number(section["tx_power_dbm"], "radio.tx_power_dbm"),
        noise_figure_db=_number(section["noise_figure_db"], "radio.noise_figure_db"),
        noise_density_dbm_hz=_number(
            section["noise_density_dbm_hz"], "radio.noise_density_dbm_hz"
        ),
        device_share_count=share,
    )


def _build_services(entries: list, ladder: SamplingLadder):
    services = []
    devices = []
    for m, entry in enumerate(entries):
        ctx = f"services[{m}]"
        eta_c = _positive(entry["cycles_per_bit_compressed"], f"{ctx}.cycles_per_bit_compressed")
        eta_u = _positive(entry["cycles_per_bit_uncompressed"], f"{ctx}.cycles_per_bit_uncompressed")
        if eta_u <= eta_c:
            raise ConfigError(
                f"{ctx}.cycles_per_bit_uncompressed: must exceed cycles_per_bit_compressed "
                f"({eta_u} <= {eta_c})"
            )
        h_c = _fraction(entry["accuracy_compressed"], f"{ctx}.accuracy_compressed")
        h_u = _fraction(entry["accuracy_uncompressed"], f"{ctx}.accuracy_uncompressed")
        if h_c >= h_u:
            raise ConfigError(
                f"{ctx}.accuracy_compressed: must be below accuracy_uncompressed "
                f"({h_c} >= {h_u})"
            )
        spec = ServiceSpec(
            index=m,
            raw_task_bits=_positive(entry["raw_task_bits"], f"{ctx}.raw_task_bits"),
            cycles_per_bit_compressed=eta_c,
            cycles_per_bit_uncompressed=eta_u,
            accuracy_compressed=h_c,
            accuracy_uncompressed=h_u,
            accuracy_threshold=_fraction(entry["accuracy_threshold"], f"{ctx}.accuracy_threshold"),
            edge_queue_cap_bits=_positive(entry["edge_queue_cap_bits"], f"{ctx}.edge_queue_cap_bits"),
        )
        services.append(spec)
        count = _integer(entry["device_count"], f"{ctx}.device_count", minimum=1)
        # May go negative (even below -0.5): per-slot draws clamp at zero, so
        # a negative mean is a legitimate way to thin or silence arrivals.
        rate = _number(entry["mean_arrival_rate"], f"{ctx}.mean_arrival_rate")
        cpu = _positive(entry["device_cpu_hz"], f"{ctx}.device_cpu_hz")
        cap = _positive(entry["local_queue_cap_bits"], f"{ctx}.local_queue_cap_bits")
        for _ in range(count):
            devices.append(
                DeviceSpec(
                    index=len(devices),
                    service=m,
                    cpu_hz=cpu,
                    mean_arrival_rate=rate,
                    local_queue_cap_bits=cap,
                )
            )
    return tuple(services), tuple(devices)


def _build_agent(section: dict) -> AgentConfig:
    discount = _number(section["discount"], "agent.discount")
    if not 0 < discount < 1:
        raise ConfigError(f"agent.discount: must lie in (0, 1), got {discount}")
    soft = _number(section["soft_update"], "agent.soft_update")
    if not 0 < soft <= 1:
        raise ConfigError(f"agent.soft_update: must lie in (0, 1], got {soft}")
    noise = _number(section["noise_std"], "agent.noise_std")
    if noise < 0:
        raise ConfigError(f"agent.noise_std: must be >= 0, got {noise}")
    minibatch = _integer(section["minibatch"], "agent.minibatch")
    capacity = _integer(section["replay_capacity"], "agent.replay_capacity")
    if capacity < minibatch:
        raise ConfigError(
            f"agent.replay_capacity: must be >= minibatch ({capacity} < {minibatch})"
        )
    return AgentConfig(
        actor_lr=_positive(section["actor_lr"], "agent.actor_lr"),
        critic_lr=_positive(section["critic_lr"], "agent.critic_lr"),
        discount=discount,
        soft_update=soft,
        noise_std=noise,
        minibatch=minibatch,
        replay_capacity=capacity,
        episodes=_integer(section["episodes"], "agent.episodes"),
        slots_per_episode=_integer(section["slots_per_episode"], "agent.slots_per_episode"),
        warmup_batches=_integer(section["warmup_batches"], "agent.warmup_batches", minimum=0),
    )
