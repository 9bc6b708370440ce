"""Comparison policies: static configuration, one-step myopic search, fixed split."""

from __future__ import annotations

import itertools

import numpy as np

from . import lyapunov
from .allocator import optimal_allocation, service_loads
from .config import ConfigError, ScenarioConfig
from .env import Action, NetworkState, evaluate_action


def fixed_allocation(scenario: ScenarioConfig) -> np.ndarray:
    """Edge shares proportional to each service's average cycle demand.

    Demand is the mean arrival rate times the raw task size times the
    uncompressed compute intensity, summed over the service's devices.
    """
    demand_bits = np.maximum(scenario.dev_arrival_rate, 0.0) * scenario.dev_raw_bits
    per_service = np.bincount(scenario.dev_service, weights=demand_bits,
                              minlength=scenario.service_count)
    cycles = per_service * scenario.svc_cycles_uncompressed
    total = cycles.sum()
    if total <= 0:
        return np.full(scenario.service_count, 1.0 / scenario.service_count)
    return cycles / total


def slot_reward(scenario: ScenarioConfig, state: NetworkState, levels, offload,
                include_deficit: bool = True) -> tuple[float, Action]:
    """Drift-plus-cost reward of a candidate (levels, offload) decision.

    The edge split is the embedded closed-form optimum for the decision, so
    candidates are compared at their best possible allocation.  With
    ``include_deficit`` off only the delay term is scored.
    """
    levels = np.asarray(levels, dtype=np.intp)
    offload = np.asarray(offload, dtype=np.intp)
    bits = state.arrival_bits * (levels + 1.0) / scenario.ladder.count
    loads = service_loads(scenario, state.edge_backlog_bits, bits, offload)
    action = Action.from_levels(levels, offload, optimal_allocation(loads),
                                scenario.ladder.count)
    outcome = evaluate_action(scenario, state, action)
    if include_deficit:
        value = lyapunov.reward(outcome.total_delay, state.deficit, outcome.accuracy,
                                scenario.svc_threshold, scenario.tradeoff_weight)
    else:
        value = -scenario.tradeoff_weight * outcome.total_delay
    return value, action


class StaticPolicy:
    """Constant per-slot decision that satisfies every accuracy threshold.

    Each device offloads at the smallest sampling level whose ladder accuracy
    times the uncompressed-model accuracy clears its service threshold; the
    edge split is the average-demand allocation.
    """

    def __init__(self, scenario: ScenarioConfig, levels=None, offload=None,
                 allocation=None):
        self.scenario = scenario
        if levels is None:
            per_service = [
                feasible_static_level(scenario, m) for m in range(scenario.service_count)
            ]
            levels = np.array([per_service[s] for s in scenario.dev_service], dtype=np.intp)
        else:
            levels = np.asarray(levels, dtype=np.intp)
        self.levels = levels
        self.offload = (np.zeros(scenario.device_count, dtype=np.intp)
                        if offload is None else np.asarray(offload, dtype=np.intp))
        self.allocation = fixed_allocation(scenario) if allocation is None else np.asarray(allocation, dtype=float)
        self._check_accuracy()
        self._action = Action.from_levels(self.levels, self.offload, self.allocation,
                                          scenario.ladder.count)

    def _check_accuracy(self) -> None:
        sc = self.scenario
        model_acc = np.where(self.offload == 1, sc.dev_acc_compressed, sc.dev_acc_uncompressed)
        per_device = sc.ladder_levels[self.levels] * model_acc
        for n, value in enumerate(per_device):
            threshold = sc.svc_threshold[sc.dev_service[n]]
            if value < threshold:
                raise ConfigError(
                    f"static policy: device {n} achieves accuracy {value:.4f} "
                    f"below its service threshold {threshold}"
                )

    def act(self, state: NetworkState) -> Action:
        return self._action


def feasible_static_level(scenario: ScenarioConfig, service: int) -> int:
    """Smallest sampling level that meets the threshold on the uncompressed model."""
    spec = scenario.services[service]
    for level, ladder_acc in enumerate(scenario.ladder.levels):
        if ladder_acc * spec.accuracy_uncompressed >= spec.accuracy_threshold:
            return level
    raise ConfigError(
        f"services[{service}]: no sampling level reaches accuracy_threshold "
        f"{spec.accuracy_threshold} (best achievable "
        f"{scenario.ladder.levels[-1] * spec.accuracy_uncompressed:.4f})"
    )


class MyopicPolicy:
    """Greedy per-slot reward maximizer via coordinate ascent over devices.

    Starting from the static configuration, devices are swept in index order;
    each sweep re-decides one device over all (level, offload) pairs with the
    rest held fixed, keeping a change only when it helps.  Exact reward ties
    prefer the higher sampling level, then offloading.  Sweeps stop at
    convergence or after ``max_passes``.
    """

    def __init__(self, scenario: ScenarioConfig, include_deficit: bool = True,
                 max_passes: int = 5):
        self.scenario = scenario
        self.include_deficit = include_deficit
        self.max_passes = max_passes
        self._start_levels = np.array(
            [feasible_static_level(scenario, m) for m in scenario.dev_service],
            dtype=np.intp,
        )

    def act(self, state: NetworkState) -> Action:
        sc = self.scenario
        levels = self._start_levels.copy()
        offload = np.zeros(sc.device_count, dtype=np.intp)
        best_value, best_action = slot_reward(sc, state, levels, offload,
                                              self.include_deficit)
        for _ in range(self.max_passes):
            changed = False
            for n in range(sc.device_count):
                current = (int(levels[n]), int(offload[n]))
                best_key = (best_value, current[0], 1 - current[1])
                chosen = None
                for level in range(sc.ladder.count):
                    for off in (0, 1):
                        if (level, off) == current:
                            continue
                        levels[n], offload[n] = level, off
                        value, action = slot_reward(sc, state, levels, offload,
                                                    self.include_deficit)
                        key = (value, level, 1 - off)
                        if key > best_key:
                            best_key = key
                            chosen = (level, off, value, action)
                if chosen is None:
                    levels[n], offload[n] = current
                else:
                    levels[n], offload[n] = chosen[0], chosen[1]
                    best_value, best_action = chosen[2], chosen[3]
                    changed = True
            if not changed:
                break
        return best_action


def exhaustive_action(scenario: ScenarioConfig, state: NetworkState,
                      include_deficit: bool = True) -> tuple[float, Action]:
    """Brute-force the per-slot maximizer over every (level, offload) combo.

    Exponential in the device count; only sensible on tiny scenarios, where
    it serves as the reference for the coordinate-ascent search.
    """
    sc = scenario
    options = list(itertools.product(range(sc.ladder.count), (0, 1)))
    best = None
    for combo in itertools.product(options, repeat=sc.device_count):
        levels = np.array([c[0] for c in combo], dtype=np.intp)
        offload = np.array([c[1] for c in combo], dtype=np.intp)
        value, action = slot_reward(sc, state, levels, offload, include_deficit)
        key = (value, tuple(levels.tolist()), tuple(1 - offload))
        if best is None or key > best[0]:
            best = (key, value, action)
    return best[1], best[2]
