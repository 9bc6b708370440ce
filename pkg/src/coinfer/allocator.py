"""Edge compute split: closed-form optimum plus a projected-gradient oracle.

The per-slot edge delay of service ``m`` is ``loads[m] / (share[m] * f_b)``
where ``loads[m]`` aggregates the CPU cycles the service demands this slot.
Minimizing the summed delay over the allocation simplex has the closed form
``share ~ sqrt(loads)``; :func:`oracle_allocation` re-derives the optimum
numerically and exists purely to cross-check the closed form.
"""

from __future__ import annotations

import numpy as np

# Replaces a zero share when a baseline supplies no compute to a loaded
# service; keeps delay finite (and enormous) instead of dividing by zero.
ALLOCATION_FLOOR = 1e-6


def service_loads(scenario, edge_backlog_bits, task_bits, offload) -> np.ndarray:
    """Per-service cycle demand for the current slot.

    For each service this sums, over its devices: the cycles of the device's
    offloaded task, the cycles of the backlogged bits, and half the cycles of
    the other devices' offloaded tasks (their average wait share).  Devices
    that process locally still contribute the backlog term, mirroring the
    delay model this load expression is derived from.
    """
    offload = np.asarray(offload, dtype=float)
    task_bits = np.asarray(task_bits, dtype=float)
    m = scenario.service_count
    off_bits = (1.0 - offload) * task_bits
    svc_off = np.bincount(scenario.dev_service, weights=off_bits, minlength=m)
    counts = scenario.svc_device_count.astype(float)
    per_service = (
        svc_off * (counts + 1.0) / 2.0
        + counts * np.asarray(edge_backlog_bits, dtype=float)
    )
    return scenario.svc_cycles_uncompressed * per_service


def optimal_allocation(loads) -> np.ndarray:
    """Closed-form minimizer of the aggregate edge delay over the simplex.

    Services with zero load get a zero share (their delay term vanishes);
    the rest split the budget proportionally to the square roots of their
    loads.  The all-zero case is degenerate -- every feasible split yields
    zero delay -- and returns the uniform allocation.
    """
    loads = np.asarray(loads, dtype=float)
    if loads.ndim != 1 or loads.size == 0:
        raise ValueError("loads must be a non-empty 1-d array")
    if (loads < 0).any():
        raise ValueError("loads must be non-negative")
    shares = np.zeros_like(loads)
    positive = loads > 0
    if not positive.any():
        return np.full(loads.shape, 1.0 / loads.size)
    roots = np.sqrt(loads[positive])
    shares[positive] = roots / roots.sum()
    return shares


def allocation_objective(loads, shares, edge_cpu_hz: float = 1.0) -> float:
    """Aggregate edge delay ``sum(loads / (shares * edge_cpu_hz))``.

    Zero-load services contribute nothing regardless of their share; a zero
    share on a loaded service yields ``inf``.
    """
    loads = np.asarray(loads, dtype=float)
    shares = np.asarray(shares, dtype=float)
    positive = loads > 0
    if not positive.any():
        return 0.0
    active = shares[positive]
    if (active <= 0).any():
        return float("inf")
    return float(np.sum(loads[positive] / (active * edge_cpu_hz)))


def kkt_spread(loads, shares, edge_cpu_hz: float = 1.0) -> float:
    """Relative disagreement of the marginal delays across loaded services.

    At the optimum every loaded service has the same marginal
    ``loads / (edge_cpu_hz * shares**2)``; returns ``(max - min) / max``
    (0 when at most one service carries load).
    """
    loads = np.asarray(loads, dtype=float)
    shares = np.asarray(shares, dtype=float)
    positive = loads > 0
    if positive.sum() <= 1:
        return 0.0
    marginals = loads[positive] / (edge_cpu_hz * np.square(shares[positive]))
    top = marginals.max()
    return float((top - marginals.min()) / top)


def oracle_allocation(loads, tolerance: float = 1e-9, max_iter: int = 100_000) -> np.ndarray:
    """Numerically minimize the aggregate edge delay over the simplex.

    Projected gradient descent with a backtracking line search, started from
    the uniform split.  Deliberately shares no algebra with
    :func:`optimal_allocation` so the two can validate each other.

    Converges when the curvature-normalized gradient-mapping residual (in
    share units, zero exactly at the optimum) drops to ``tolerance``, or when
    the line search can no longer produce a representable decrease -- the
    float64 optimum, which the residual guard below still sanity-checks.

    Raises:
        RuntimeError: if neither criterion is met within ``max_iter``
            iterations, or the search stalls while visibly non-optimal.
    """
    loads = np.asarray(loads, dtype=float)
    if (loads < 0).any():
        raise ValueError("loads must be non-negative")
    shares = np.zeros_like(loads)
    active = loads > 0
    k = int(active.sum())
    if k == 0:
        return np.full(loads.shape, 1.0 / loads.size)
    if k == 1:
        shares[active] = 1.0
        return shares

    stall_guard = 1e-6
    lam = loads[active]
    c = np.full(k, 1.0 / k)
    f = float(np.sum(lam / c))
    step = c.min() ** 3 / (2.0 * lam.max())  # inverse local curvature
    residual = np.inf
    for iteration in range(max_iter):
        grad = -lam / np.square(c)
        probe = 1.0 / np.max(2.0 * lam / c**3)
        residual = float(np.max(np.abs(c - _project_simplex(c - probe * grad))))
        if residual <= tolerance:
            shares[active] = c
            return shares
        t = step
        stalled = False
        while True:
            cand = _project_simplex(c - t * grad)
            move_sq = float(np.dot(cand - c, cand - c))
            fc = float(np.sum(lam / cand)) if (cand > 0).all() else np.inf
            if (np.isfinite(fc) and move_sq > 0.0 and fc < f
                    and fc <= f - 1e-4 / t * move_sq):
                break
            if move_sq == 0.0:
                # Shrinking t further cannot reopen a zero-length move.
                stalled = True
                break
            t *= 0.5
            if t < 1e-300:
                stalled = True
                break
        if stalled:
            if residual <= stall_guard:
                shares[active] = c
                return shares
            raise RuntimeError(
                f"allocation oracle stalled after {iteration} iterations with "
                f"residual {residual:.3e} (loads {loads.tolist()})"
            )
        c, f = cand, fc
        step = t * 2.0
    raise RuntimeError(
        f"allocation oracle failed to converge in {max_iter} iterations "
        f"(residual {residual:.3e}, target {tolerance:.3e}, loads {loads.tolist()})"
    )


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}``."""
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u) - 1.0
    ranks = np.arange(1, v.size + 1)
    support = np.nonzero(u - cumulative / ranks > 0)[0][-1]
    theta = cumulative[support] / (support + 1.0)
    return np.maximum(v - theta, 0.0)


def equivalence_sweep(instances: int = 1000, max_services: int = 5,
                      seed: int = 0) -> dict:
    """Compare the closed form against the oracle on random load vectors.

    Loads are drawn from ``(0, 10]``; returns the worst per-component gap,
    worst KKT spread of the closed form, and the instance count.
    """
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    worst_kkt = 0.0
    for _ in range(instances):
        m = int(rng.integers(1, max_services + 1))
        loads = 10.0 - rng.uniform(0.0, 10.0, size=m)
        closed = optimal_allocation(loads)
        numeric = oracle_allocation(loads)
        worst_gap = max(worst_gap, float(np.max(np.abs(closed - numeric))))
        worst_kkt = max(worst_kkt, kkt_spread(loads, closed))
    return {"instances": instances, "max_component_gap": worst_gap, "max_kkt_spread": worst_kkt}
