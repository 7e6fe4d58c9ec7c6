"""Exhaustive ground truth for small instances.

Every assignment is enumerated (as a dense numpy grid) and checked against
every rule; no pruning, no cleverness.  Used as the reference side of the
engine tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OracleSizeError
from .model import Assignment, Instance, normalize

MAX_STATES = 10**7


@dataclass(frozen=True)
class OracleReport:
    optimum: Assignment | None
    optimal_cost: float
    optima_count: int
    runner_up_gap: float  # scaled units, inf when there is no runner-up

    @property
    def unique(self) -> bool:
        return self.optimum is not None and self.optima_count == 1


def _guard(instance: Instance, limit: int) -> None:
    states = math.prod(instance.task_counts)
    if states > limit:
        raise OracleSizeError(f"{states} assignments exceed the oracle limit of {limit}")


def _axis(values, machine: int, m: int) -> np.ndarray:
    shape = [1] * m
    shape[machine] = len(values)
    return np.asarray(values, dtype=float).reshape(shape)


def _onehot(machine: int, tasks, instance: Instance) -> np.ndarray:
    m = instance.machine_count
    mask = np.zeros(instance.task_counts[machine], dtype=bool)
    mask[list(tasks)] = True
    return _axis(mask, machine, m).astype(bool)


def grids(instance: Instance, limit: int = MAX_STATES):
    """Dense ``(raw total cost, extra cost, feasible mask)`` over all assignments."""
    _guard(instance, limit)
    m = instance.machine_count
    shape = instance.task_counts
    raw = np.zeros(shape)
    for i, row in enumerate(instance.times):
        raw = raw + _axis(row, i, m)
    extra = np.zeros(shape)
    feasible = np.ones(shape, dtype=bool)
    for rule in instance.rules:
        fires = np.ones(shape, dtype=bool)
        for machine, task in rule.conditions:
            fires = fires & _onehot(machine, [task], instance)
        miss = ~_onehot(rule.target_machine, rule.target_tasks, instance)
        feasible &= ~(fires & miss)
        if rule.extra_cost:
            extra = extra + np.where(fires, rule.extra_cost, 0.0)
    return raw, extra, feasible


def brute_force(instance: Instance, limit: int = MAX_STATES, rel_tol: float = 1e-12) -> OracleReport:
    """Cheapest feasible assignment by enumeration (ties: lexicographically first)."""
    raw, extra, feasible = grids(instance, limit)
    total = np.where(feasible, raw + extra, np.inf).ravel()
    flat = int(np.argmin(total))
    best = float(total[flat])
    if math.isinf(best):
        return OracleReport(None, math.inf, 0, math.inf)
    tol = rel_tol * max(1.0, abs(best))
    ties = total <= best + tol
    count = int(ties.sum())
    rest = total[~ties]
    second = float(rest.min()) if rest.size else math.inf
    slope = normalize(instance, reorder=False).slope
    gap = 0.0 if count > 1 else (second - best) * slope
    optimum = tuple(int(i) for i in np.unravel_index(flat, instance.task_counts))
    return OracleReport(optimum, best, count, gap)


def brute_force_marginal(instance: Instance, tau: float, q: int, limit: int = MAX_STATES) -> np.ndarray:
    """Sum of ``exp(-tau * scaled_total)`` over feasible assignments, split by machine ``q``'s task.

    ``q`` is in the instance's own numbering.  Soft rules add their scaled
    extra cost whenever they fire.
    """
    raw, extra, feasible = grids(instance, limit)
    norm = normalize(instance, reorder=False)
    if norm.c_max > norm.c_min:
        scaled = (2.0 * raw - (norm.c_max + norm.c_min)) * norm.slope / 2.0
    else:
        scaled = np.zeros_like(raw)
    weights = np.where(feasible, np.exp(-tau * (scaled + extra * norm.slope)), 0.0)
    axes = tuple(i for i in range(instance.machine_count) if i != q)
    return weights.sum(axis=axes) if axes else weights
