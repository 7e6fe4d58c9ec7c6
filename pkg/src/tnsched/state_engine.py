"""Evolved superposition, marginal amplitudes and machine-by-machine decoding.

Everything here works in solver (position) order; ``solve_full`` maps the
answer back to the caller's machine numbering.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, MemoryCapExceeded
from .model import Assignment, Instance, NormalizedInstance, Rule, check_rules, normalize, to_original
from .rule_compiler import RuleLayer, compile_all
from .tensor_core import OPEN, TRACE, ContractionStats, Site, SiteColumn, full_contract, peak_elements

log = logging.getLogger(__name__)

DEFAULT_TAU = 10.0
BYTES_PER_ELEMENT = 8


@dataclass
class EvolvedState:
    tau: float
    vectors: list[np.ndarray]
    layers: list[RuleLayer]
    fixed: dict[int, int] = field(default_factory=dict)
    memory_cap_bytes: int | None = None

    @property
    def machine_count(self) -> int:
        return len(self.vectors)

    def columns(self, open_machine: int | None = None) -> list[SiteColumn]:
        per_machine: list[list[Site]] = [[] for _ in self.vectors]
        for k, layer in enumerate(self.layers):
            for machine, tensor in layer.sites.items():
                per_machine[machine].append(Site(k, tensor))
        return [
            SiteColumn(i, vec, tuple(per_machine[i]), OPEN if i == open_machine else TRACE)
            for i, vec in enumerate(self.vectors)
        ]


def build_state(
    norm: NormalizedInstance,
    tau: float = DEFAULT_TAU,
    forbidden: Iterable[tuple[int, int]] = (),
    rules: Sequence[Rule] | None = None,
    fixed: Mapping[int, int] | None = None,
    penalties: Mapping[tuple[int, int], float] | None = None,
    memory_cap_bytes: int | None = None,
) -> EvolvedState:
    """Evolved vectors ``exp(-tau * scaled_time)`` plus compiled rule layers.

    ``forbidden`` tasks get amplitude 0; ``fixed`` machines keep only their
    chosen entry; ``penalties`` add scaled cost to single tasks.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    rules = norm.scaled_rules if rules is None else rules
    fixed = dict(fixed or {})
    vectors = []
    for i, row in enumerate(norm.scaled_times):
        costs = np.array(row, dtype=float)
        for (m, t), extra in (penalties or {}).items():
            if m == i:
                costs[t] += extra
        vectors.append(np.exp(-tau * costs))
    for m, t in forbidden:
        vectors[m][t] = 0.0
    for m, t in fixed.items():
        keep = vectors[m][t]
        vectors[m][:] = 0.0
        vectors[m][t] = keep
    for i, vec in enumerate(vectors):
        if not vec.any():
            raise InfeasibleError(f"every task of machine position {i} is forbidden")
    layers = compile_all(rules, norm.base.task_counts, tau)
    return EvolvedState(tau, vectors, layers, fixed, memory_cap_bytes)


def _check_memory(state: EvolvedState, columns: Sequence[SiteColumn]) -> int:
    peak = peak_elements(columns)
    if state.memory_cap_bytes is not None and peak * BYTES_PER_ELEMENT > state.memory_cap_bytes:
        raise MemoryCapExceeded(peak * BYTES_PER_ELEMENT, state.memory_cap_bytes)
    return peak


def marginal(state: EvolvedState, q: int, stats: ContractionStats | None = None) -> np.ndarray:
    """Amplitudes of machine ``q`` with every other machine traced out."""
    if q in state.fixed:
        raise ValueError(f"machine position {q} is already fixed")
    columns = state.columns(open_machine=q)
    _check_memory(state, columns)
    vec = full_contract(columns, stats=stats)
    if not np.any(vec > 0):
        raise InfeasibleError(f"no feasible assignment left (marginal of position {q} vanished)")
    return vec


def partition_sum(state: EvolvedState) -> float:
    columns = state.columns()
    _check_memory(state, columns)
    return float(full_contract(columns))


def determine(amplitudes: Sequence[float]) -> int:
    """Index of the largest |amplitude|; the lowest index wins ties."""
    amps = np.abs(np.asarray(amplitudes, dtype=float))
    if not amps.any():
        raise InfeasibleError("all amplitudes are zero")
    return int(np.argmax(amps))


# --------------------------------------------------------------------------
# rule simplification


@dataclass
class Simplification:
    rules: list[Rule]
    forced: dict[int, int] = field(default_factory=dict)
    forbidden: set[tuple[int, int]] = field(default_factory=set)
    penalties: dict[tuple[int, int], float] = field(default_factory=dict)
    restricted: dict[int, frozenset[int]] = field(default_factory=dict)


def _reduce_rule(rule: Rule, fixed: Mapping[int, int], task_counts: Sequence[int], out: Simplification):
    conds = []
    for m, t in rule.conditions:
        if m in fixed:
            if fixed[m] != t:
                return  # can never fire
        else:
            conds.append((m, t))
    target = rule.target_machine
    if target not in fixed:
        if conds:
            out.rules.append(rule if len(conds) == len(rule.conditions)
                             else Rule(tuple(conds), target, rule.target_tasks, rule.extra_cost))
        else:
            # always fires: target restricted; a soft extra becomes a constant
            prev = out.restricted.get(target, frozenset(range(task_counts[target])))
            out.restricted[target] = prev & rule.target_tasks
        return
    value = fixed[target]
    if not conds:
        if value not in rule.target_tasks:
            raise InfeasibleError(f"fixed machines violate a rule targeting position {target}")
        return
    if value in rule.target_tasks:
        if not rule.extra_cost:
            return
        if len(conds) == 1:
            key = conds[0]
            out.penalties[key] = out.penalties.get(key, 0.0) + rule.extra_cost
        else:
            out.rules.append(Rule(tuple(conds), target, rule.target_tasks, rule.extra_cost))
        return
    # target fixed outside the allowed set: the conditions must not all hold
    while conds:
        last = max(conds)
        rest = [c for c in conds if c != last]
        m, t = last
        others = frozenset(range(task_counts[m])) - {t}
        if not others:
            conds = rest
            continue
        if rest:
            out.rules.append(Rule(tuple(rest), m, others))
        else:
            out.forbidden.add((m, t))
        return
    raise InfeasibleError(f"fixed machines force a violation of a rule targeting position {target}")


def simplify_rules(
    rules: Sequence[Rule],
    f: int,
    v: int,
    fixed_so_far: Mapping[int, int],
    task_counts: Sequence[int],
) -> Simplification:
    """Rewrite ``rules`` once machine ``f`` is known to run task ``v``.

    Rules that can no longer fire disappear, satisfied conditions are
    dropped, rules whose conditions are all met turn into restrictions on
    their target, and rules that would contradict the fixed target become
    exclusions on their last remaining condition machine.
    """
    fixed = dict(fixed_so_far)
    if fixed.get(f, v) != v:
        raise InfeasibleError(f"position {f} already fixed to {fixed[f]}, not {v}")
    fixed[f] = v
    out = Simplification([])
    for rule in rules:
        _reduce_rule(rule, fixed, task_counts, out)
    for m, allowed in out.restricted.items():
        if not allowed:
            raise InfeasibleError(f"conflicting forced tasks on position {m}")
        if len(allowed) == 1:
            out.forced[m] = next(iter(allowed))
        out.forbidden.update((m, t) for t in range(task_counts[m]) if t not in allowed)
    return out


# --------------------------------------------------------------------------
# full solve


@dataclass
class SolveTrace:
    steps: list[dict] = field(default_factory=list)
    max_boundary: int = 1
    contractions: int = 0

    def record(self, **step) -> None:
        self.steps.append(step)
        log.info("solve step %s", step)


def solve_positions(
    norm: NormalizedInstance,
    tau: float = DEFAULT_TAU,
    rules: Sequence[Rule] | None = None,
    forbidden: Iterable[tuple[int, int]] = (),
    memory_cap_bytes: int | None = None,
    trace: SolveTrace | None = None,
) -> Assignment:
    """Decode the best assignment machine by machine, in position order."""
    task_counts = norm.base.task_counts
    m = len(task_counts)
    current = list(norm.scaled_rules if rules is None else rules)
    allowed = [set(range(p)) for p in task_counts]
    for machine, task in forbidden:
        allowed[machine].discard(task)
    penalties: dict[tuple[int, int], float] = {}
    fixed: dict[int, int] = {}
    trace = trace if trace is not None else SolveTrace()

    def fix(machine: int, task: int, via: str, **info) -> None:
        nonlocal current
        queue = [(machine, task, via)]
        while queue:
            machine, task, via = queue.pop(0)
            if machine in fixed:
                if fixed[machine] != task:
                    raise InfeasibleError(f"position {machine} forced to two tasks")
                continue
            if task not in allowed[machine]:
                raise InfeasibleError(f"position {machine} forced to a forbidden task")
            fixed[machine] = task
            allowed[machine] = {task}
            step = simplify_rules(current, machine, task, fixed, task_counts)
            current = step.rules
            for (pm, pt), extra in step.penalties.items():
                penalties[(pm, pt)] = penalties.get((pm, pt), 0.0) + extra
            for fm, ft in step.forbidden:
                allowed[fm].discard(ft)
            trace.record(position=machine, task=task, via=via, rules_remaining=len(current), **info)
            info = {}
            for other in range(m):
                if other in fixed:
                    continue
                if not allowed[other]:
                    raise InfeasibleError(f"no task left for position {other}")
                if len(allowed[other]) == 1:
                    queue.append((other, next(iter(allowed[other])), "forced"))

    for i in range(m):
        if not allowed[i]:
            raise InfeasibleError(f"no task left for position {i}")
    for i in range(m):
        if i not in fixed and len(allowed[i]) == 1:
            fix(i, next(iter(allowed[i])), "forced")

    while len(fixed) < m:
        q = min(i for i in range(m) if i not in fixed)
        blocked = [(i, t) for i in range(m) for t in range(task_counts[i]) if t not in allowed[i]]
        state = build_state(norm, tau, blocked, current, fixed, penalties, memory_cap_bytes)
        stats = ContractionStats()
        amps = marginal(state, q, stats)
        trace.contractions += 1
        trace.max_boundary = max(trace.max_boundary, stats.max_boundary)
        fix(q, determine(amps), "marginal", max_boundary=stats.max_boundary,
            layers=len(state.layers))

    result = tuple(fixed[i] for i in range(m))
    target_rules = norm.scaled_rules if rules is None else rules
    if check_rules(result, target_rules):
        raise InfeasibleError("decoded assignment violates the rules")
    return result


def solve_full(
    problem: Instance | NormalizedInstance,
    tau: float = DEFAULT_TAU,
    memory_cap_bytes: int | None = None,
    trace: SolveTrace | None = None,
) -> Assignment:
    """Best assignment (original machine numbering) under all rules at once."""
    norm = problem if isinstance(problem, NormalizedInstance) else normalize(problem)
    positions = solve_positions(norm, tau, memory_cap_bytes=memory_cap_bytes, trace=trace)
    return to_original(positions, norm.permutation)
