import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coinfer.allocator import (allocation_objective, equivalence_sweep, kkt_spread,
                               optimal_allocation, oracle_allocation, service_loads)

from conftest import make_scenario


def test_optimal_allocation_examples():
    assert optimal_allocation(np.array([4.0, 1.0])) == pytest.approx([2 / 3, 1 / 3])
    assert optimal_allocation(np.array([7.3, 7.3])) == pytest.approx([0.5, 0.5])
    assert optimal_allocation(np.array([5.0])) == pytest.approx([1.0])


def test_optimal_allocation_zero_load_services_get_nothing():
    shares = optimal_allocation(np.array([4.0, 0.0, 1.0]))
    assert shares == pytest.approx([2 / 3, 0.0, 1 / 3])
    assert shares.sum() == pytest.approx(1.0)


def test_optimal_allocation_degenerate_all_zero_is_uniform():
    assert optimal_allocation(np.zeros(4)) == pytest.approx([0.25] * 4)


def test_optimal_allocation_rejects_negative_loads():
    with pytest.raises(ValueError):
        optimal_allocation(np.array([1.0, -0.1]))


@given(loads=st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=1, max_size=6),
       scale=st.floats(min_value=1e-3, max_value=1e3))
@settings(max_examples=200)
def test_optimal_allocation_scale_invariant(loads, scale):
    loads = np.array(loads)
    assert optimal_allocation(scale * loads) == pytest.approx(optimal_allocation(loads))


@given(loads=st.lists(st.floats(min_value=1e-2, max_value=1e2), min_size=2, max_size=5))
@settings(max_examples=200)
def test_optimal_allocation_feasible_and_kkt(loads):
    loads = np.array(loads)
    shares = optimal_allocation(loads)
    assert shares.sum() == pytest.approx(1.0)
    assert ((shares >= 0) & (shares <= 1)).all()
    assert kkt_spread(loads, shares) < 1e-9


def test_increasing_one_load_shifts_share_toward_it(rng):
    for _ in range(50):
        loads = rng.uniform(0.5, 10.0, size=4)
        base = optimal_allocation(loads)
        bumped = loads.copy()
        bumped[2] *= 1.7
        after = optimal_allocation(bumped)
        assert after[2] > base[2]
        others = [i for i in range(4) if i != 2]
        assert (after[others] < base[others]).all()


def test_closed_form_beats_random_feasible_points(rng):
    loads = rng.uniform(0.1, 10.0, size=4)
    best = allocation_objective(loads, optimal_allocation(loads))
    for _ in range(1000):
        raw = rng.random(4) + 1e-12
        candidate = raw / raw.sum()
        assert best <= allocation_objective(loads, candidate) + 1e-9


def test_oracle_matches_closed_form_on_examples():
    numeric = oracle_allocation(np.array([4.0, 1.0]))
    assert numeric == pytest.approx([2 / 3, 1 / 3], abs=1e-6)
    assert oracle_allocation(np.ones(3)) == pytest.approx([1 / 3] * 3, abs=1e-6)
    assert oracle_allocation(np.array([0.0, 2.0])) == pytest.approx([0.0, 1.0])
    assert oracle_allocation(np.zeros(2)) == pytest.approx([0.5, 0.5])


def test_oracle_equivalence_sweep_small():
    report = equivalence_sweep(instances=200, max_services=5, seed=5)
    assert report["max_component_gap"] < 1e-5
    assert report["max_kkt_spread"] < 1e-9


def test_oracle_raises_on_impossible_iteration_budget():
    with pytest.raises(RuntimeError, match="failed to converge"):
        oracle_allocation(np.array([4.0, 1.0, 2.5]), tolerance=0.0, max_iter=3)


# --- service load aggregation ---------------------------------------------------


def _loads_by_double_sum(scenario, edge_backlog, bits, offload):
    """Literal per-device double sum, kept independent of the vectorized path."""
    loads = np.zeros(scenario.service_count)
    for m in range(scenario.service_count):
        eta = scenario.services[m].cycles_per_bit_uncompressed
        members = scenario.devices_of(m)
        for n in members:
            own = eta * (1 - offload[n]) * bits[n]
            backlog = edge_backlog[m] * eta
            wait = 0.5 * eta * sum(
                (1 - offload[i]) * bits[i] for i in members if i != n
            )
            loads[m] += own + backlog + wait
    return loads


def test_service_load_examples():
    sc = make_scenario(device_counts=(1,))
    loads = service_loads(sc, np.array([0.0]), np.array([768e3]), np.array([0]))
    assert loads == pytest.approx([200.0 * 768e3])  # 1.536e8 cycles
    loads = service_loads(sc, np.array([0.0]), np.array([768e3]), np.array([1]))
    assert loads == pytest.approx([0.0])
    two = make_scenario(device_counts=(2,))
    loads = service_loads(two, np.array([0.0]), np.array([768e3, 768e3]),
                          np.array([0, 0]))
    assert loads == pytest.approx([3 * 200.0 * 768e3])


def test_service_load_matches_double_sum(rng):
    sc = make_scenario(device_counts=(3, 2))
    for _ in range(200):
        bits = rng.uniform(0, 1e6, size=5)
        offload = rng.integers(0, 2, size=5)
        edge = rng.uniform(0, 2e6, size=2)
        fast = service_loads(sc, edge, bits, offload)
        slow = _loads_by_double_sum(sc, edge, bits, offload)
        assert fast == pytest.approx(slow, rel=1e-12)
