"""Accuracy deficit queues and the drift-plus-cost reward.

The long-term accuracy constraints are tracked by per-service virtual queues:
each slot the queue absorbs the shortfall of achieved accuracy below its
threshold and drains on surplus.  The per-slot reward trades total delay
against the deficit-weighted shortfall, turning the constrained control
problem into an unconstrained one.
"""

from __future__ import annotations

import numpy as np

# Absorbs floating-point rounding when asserting the one-slot drift bound.
DRIFT_TOLERANCE = 1e-12


def update_deficit(deficit, threshold, accuracy):
    """One-slot deficit-queue update: ``[threshold - accuracy + deficit]+``.

    Accepts scalars or aligned arrays.
    """
    return np.maximum(np.asarray(threshold) - accuracy + deficit, 0.0)


def lyapunov_value(deficit):
    """Quadratic potential of a deficit backlog: ``deficit**2 / 2``."""
    return 0.5 * np.square(deficit)


def drift_bound(deficit: float, accuracy: float, threshold: float,
                drift_constant: float, min_accuracy: float | None = None):
    """One-slot drift of the potential and its analytic upper bound.

    Returns ``(drift, bound, holds)`` where ``holds`` allows
    :data:`DRIFT_TOLERANCE` of rounding slack.  Diagnostic only; the bound
    holds for any accuracy at or above the model minimum, so a violation
    indicates a bug.

    Raises:
        ValueError: if ``min_accuracy`` is given and ``accuracy`` falls below
            it, which signals an inconsistent accuracy model rather than a
            drift violation.
    """
    if min_accuracy is not None and accuracy < min_accuracy - DRIFT_TOLERANCE:
        raise ValueError(
            f"accuracy {accuracy} below the configured minimum {min_accuracy}; "
            "the accuracy model and deficit constants disagree"
        )
    nxt = update_deficit(deficit, threshold, accuracy)
    drift = float(lyapunov_value(nxt) - lyapunov_value(deficit))
    bound = float(drift_constant + deficit * (threshold - accuracy))
    return drift, bound, drift <= bound + DRIFT_TOLERANCE


def reward(total_delay, deficits, accuracies, thresholds, weight) -> float:
    """Drift-plus-cost reward for one slot.

    ``-weight * total_delay - sum_m deficits[m] * (thresholds[m] - accuracies[m])``.
    The additive constant that completes the drift bound is omitted: it does
    not depend on the action.
    """
    shortfall = np.asarray(thresholds, dtype=float) - np.asarray(accuracies, dtype=float)
    return float(-weight * total_delay - np.dot(np.asarray(deficits, dtype=float), shortfall))


class DeficitTracker:
    """Per-service deficit backlogs plus the reward bookkeeping around them."""

    def __init__(self, thresholds, min_accuracies, weight: float):
        self.thresholds = np.asarray(thresholds, dtype=float)
        self.min_accuracies = np.asarray(min_accuracies, dtype=float)
        gap = self.thresholds - self.min_accuracies
        self.drift_constants = 0.5 * gap * gap
        self.weight = float(weight)
        self.deficits = np.zeros_like(self.thresholds)

    def reset(self) -> None:
        self.deficits = np.zeros_like(self.thresholds)

    def reward(self, total_delay: float, accuracies) -> float:
        """Reward for the current slot, using the pre-update backlogs."""
        return reward(total_delay, self.deficits, accuracies, self.thresholds, self.weight)

    def advance(self, accuracies) -> np.ndarray:
        """Apply the one-slot queue update and return the new backlogs."""
        self.deficits = update_deficit(self.deficits, self.thresholds, accuracies)
        return self.deficits
