import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coinfer.lyapunov import (DeficitTracker, drift_bound, lyapunov_value, reward,
                              update_deficit)


def test_update_deficit_cases():
    assert update_deficit(0.0, 0.8, 0.9) == 0.0  # surplus clamps
    assert update_deficit(0.5, 0.9, 0.8) == pytest.approx(0.6)
    assert update_deficit(0.0, 0.85, 0.85) == 0.0


def test_lyapunov_value_cases():
    assert lyapunov_value(0.0) == 0.0
    assert lyapunov_value(1.0) == 0.5
    assert lyapunov_value(0.6) == pytest.approx(0.18)


def test_drift_bound_zero_drift_at_threshold():
    constant = (0.9 - 0.472) ** 2 / 2
    drift, bound, holds = drift_bound(0.0, 0.9, 0.9, constant)
    assert drift == 0.0
    assert bound == pytest.approx(constant)
    assert holds


def test_drift_bound_worked_example():
    constant = (0.9 - 0.472) ** 2 / 2  # ~0.0916
    drift, bound, holds = drift_bound(0.5, 0.8, 0.9, constant)
    assert drift == pytest.approx(0.6 ** 2 / 2 - 0.5 ** 2 / 2)  # 0.055
    assert bound == pytest.approx(constant + 0.5 * 0.1)  # ~0.1416
    assert holds


def test_drift_bound_rejects_accuracy_below_minimum():
    constant = (0.9 - 0.472) ** 2 / 2
    with pytest.raises(ValueError, match="below the configured minimum"):
        drift_bound(0.5, 0.3, 0.9, constant, min_accuracy=0.472)


@given(deficit=st.floats(min_value=0.0, max_value=50.0),
       accuracy=st.floats(min_value=0.472, max_value=1.0))
@settings(max_examples=500)
def test_drift_bound_holds_everywhere(deficit, accuracy):
    constant = (0.9 - 0.472) ** 2 / 2
    _, _, holds = drift_bound(deficit, accuracy, 0.9, constant, min_accuracy=0.472)
    assert holds


def test_reward_cases():
    assert reward(0.0, [0.0, 0.0], [0.9, 0.95], [0.8, 0.9], 0.05) == 0.0
    value = reward(2.0, [0.5, 0.0], [0.8, 0.95], [0.9, 0.9], 0.05)
    assert value == pytest.approx(-0.1 - 0.05)
    # constraint satisfied exactly: only the delay term remains
    assert reward(3.0, [1.0, 2.0], [0.8, 0.9], [0.8, 0.9], 0.05) == pytest.approx(-0.15)


def test_reward_monotone_in_delay_and_accuracy():
    base = reward(1.0, [0.5], [0.85], [0.9], 0.05)
    assert reward(2.0, [0.5], [0.85], [0.9], 0.05) < base
    assert reward(1.0, [0.5], [0.90], [0.9], 0.05) > base  # deficit > 0 rewards accuracy


def test_tracker_reward_uses_pre_update_backlog():
    tracker = DeficitTracker([0.9], [0.472], weight=0.05)
    # first slot: backlog still zero, so only the delay term
    assert tracker.reward(2.0, [0.8]) == pytest.approx(-0.1)
    tracker.advance([0.8])
    assert tracker.deficits == pytest.approx([0.1])
    assert tracker.reward(2.0, [0.8]) == pytest.approx(-0.1 - 0.1 * 0.1)


def test_tracker_deficit_drains_only_on_surplus():
    tracker = DeficitTracker([0.9], [0.472], weight=0.05)
    tracker.advance([0.7])
    z1 = float(tracker.deficits[0])
    tracker.advance([0.95])
    assert float(tracker.deficits[0]) == pytest.approx(z1 - 0.05)
    tracker.advance([1.0])
    tracker.advance([1.0])
    assert (tracker.deficits >= 0.0).all()


def test_telescoping_certificate(rng):
    """Average shortfall over any horizon is bounded by final deficit / horizon."""
    threshold = 0.9
    tracker = DeficitTracker([threshold], [0.472], weight=0.05)
    accuracies = rng.uniform(0.5, 1.0, size=500)
    for a in accuracies:
        tracker.advance([a])
    horizon = len(accuracies)
    mean_shortfall = float(np.mean(threshold - accuracies))
    assert mean_shortfall <= tracker.deficits[0] / horizon + 1e-12
