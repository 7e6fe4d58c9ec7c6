"""Problem representation: instances, rules, costs, normalization and ordering.

Machines are indexed ``0..m-1`` and machine ``i`` offers ``P_i`` alternative
tasks.  An assignment picks one task per machine; its cost is the sum of the
chosen execution times.  Rules are directed: when every condition
``(machine, task)`` holds, the target machine must run one of the target tasks.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidAssignmentError, InvalidInstanceError

Assignment = tuple[int, ...]


@dataclass(frozen=True)
class Rule:
    """Conditional restriction ``conditions -> target_machine in target_tasks``.

    ``extra_cost`` (raw time units) is paid whenever the rule fires, i.e. when
    all of its conditions hold.
    """

    conditions: tuple[tuple[int, int], ...]
    target_machine: int
    target_tasks: frozenset[int]
    extra_cost: float | None = None

    def __post_init__(self):
        conds = tuple((int(m), int(t)) for m, t in self.conditions)
        object.__setattr__(self, "conditions", conds)
        object.__setattr__(self, "target_tasks", frozenset(int(t) for t in self.target_tasks))
        if not conds:
            raise InvalidInstanceError("rule needs at least one condition")
        machines = [m for m, _ in conds]
        if len(set(machines)) != len(machines):
            raise InvalidInstanceError(f"rule repeats a condition machine: {conds}")
        if self.target_machine in machines:
            raise InvalidInstanceError(
                f"rule conditions on its own target machine {self.target_machine}"
            )
        if not self.target_tasks:
            raise InvalidInstanceError("rule needs at least one target task")
        if self.extra_cost is not None and self.extra_cost < 0:
            raise InvalidInstanceError("extra_cost must be nonnegative")

    @classmethod
    def simple(cls, conditions, target_machine: int, target_task: int, extra_cost=None) -> Rule:
        return cls(tuple(conditions), target_machine, frozenset({target_task}), extra_cost)

    @property
    def machines(self) -> tuple[int, ...]:
        """All machines the rule touches (conditions then target)."""
        return tuple(m for m, _ in self.conditions) + (self.target_machine,)

    @property
    def first_machine(self) -> int:
        return min(self.machines)

    @property
    def last_machine(self) -> int:
        return max(self.machines)

    @property
    def is_soft(self) -> bool:
        return bool(self.extra_cost)

    def fires(self, assignment: Sequence[int]) -> bool:
        return all(assignment[m] == t for m, t in self.conditions)

    def violated_by(self, assignment: Sequence[int]) -> bool:
        return self.fires(assignment) and assignment[self.target_machine] not in self.target_tasks

    def remap(self, new_index: Sequence[int]) -> Rule:
        """Rename machines with ``new_index[old] -> new``."""
        return Rule(
            tuple((new_index[m], t) for m, t in self.conditions),
            new_index[self.target_machine],
            self.target_tasks,
            self.extra_cost,
        )

    def to_json(self) -> dict:
        doc = {
            "if": [[m, t] for m, t in self.conditions],
            "then": {"machine": self.target_machine, "tasks": sorted(self.target_tasks)},
        }
        if self.extra_cost is not None:
            doc["extra_cost"] = self.extra_cost
        return doc


@dataclass(frozen=True)
class Instance:
    times: tuple[tuple[float, ...], ...]
    rules: tuple[Rule, ...] = ()

    def __post_init__(self):
        times = tuple(tuple(float(t) for t in row) for row in self.times)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "rules", tuple(self.rules))
        if not times:
            raise InvalidInstanceError("instance needs at least one machine")
        for i, row in enumerate(times):
            if not row:
                raise InvalidInstanceError(f"machine {i} has no tasks")
            if any(t < 0 or t != t or t == float("inf") for t in row):
                raise InvalidInstanceError(f"machine {i} has a negative or non-finite time")
        for k, rule in enumerate(self.rules):
            for m, t in rule.conditions + tuple((rule.target_machine, t) for t in rule.target_tasks):
                if not 0 <= m < len(times):
                    raise InvalidInstanceError(f"rule {k} references machine {m}")
                if not 0 <= t < len(times[m]):
                    raise InvalidInstanceError(f"rule {k} references task {t} on machine {m}")

    @property
    def machine_count(self) -> int:
        return len(self.times)

    @property
    def task_counts(self) -> tuple[int, ...]:
        return tuple(len(row) for row in self.times)

    def with_rules(self, rules: Iterable[Rule]) -> Instance:
        return Instance(self.times, tuple(rules))

    def to_json(self) -> dict:
        return {
            "machines": [list(row) for row in self.times],
            "rules": [r.to_json() for r in self.rules],
        }


def validate_assignment(instance: Instance, assignment: Sequence[int]) -> Assignment:
    x = tuple(int(t) for t in assignment)
    if len(x) != instance.machine_count:
        raise InvalidAssignmentError(
            f"assignment has {len(x)} entries, instance has {instance.machine_count} machines"
        )
    for i, (t, p) in enumerate(zip(x, instance.task_counts)):
        if not 0 <= t < p:
            raise InvalidAssignmentError(f"task {t} out of range on machine {i} (P={p})")
    return x


def cost(instance: Instance, assignment: Sequence[int]) -> float:
    """Total execution time of ``assignment`` (rule extra costs excluded)."""
    x = validate_assignment(instance, assignment)
    return float(sum(row[t] for row, t in zip(instance.times, x)))


def total_cost(instance: Instance, assignment: Sequence[int]) -> float:
    """Execution time plus the extra cost of every rule that fires."""
    x = validate_assignment(instance, assignment)
    extra = sum(r.extra_cost for r in instance.rules if r.extra_cost and r.fires(x))
    return cost(instance, x) + extra


def check_rules(assignment: Sequence[int], rules: Sequence[Rule]) -> list[int]:
    """Indices of the rules violated by ``assignment`` (empty means feasible)."""
    return [k for k, rule in enumerate(rules) if rule.violated_by(assignment)]


# --------------------------------------------------------------------------
# machine ordering


def order_machines(instance: Instance) -> tuple[int, ...]:
    """Position -> machine map that puts the most rule-heavy machines in the middle.

    Machines are sorted by ascending rule count (ties: higher index first) and
    dealt alternately to the left and right ends, working inwards.
    """
    m = instance.machine_count
    counts = [0] * m
    for rule in instance.rules:
        for machine in rule.machines:
            counts[machine] += 1
    ranked = sorted(range(m), key=lambda i: (counts[i], -i))
    order = [0] * m
    left, right = 0, m - 1
    for k, machine in enumerate(ranked):
        if k % 2 == 0:
            order[left] = machine
            left += 1
        else:
            order[right] = machine
            right -= 1
    return tuple(order)


def inverse_permutation(order: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(order)
    for pos, machine in enumerate(order):
        inv[machine] = pos
    return tuple(inv)


def permute_instance(instance: Instance, order: Sequence[int]) -> Instance:
    """Rewrite ``instance`` so that position ``p`` holds machine ``order[p]``."""
    position_of = inverse_permutation(order)
    times = tuple(instance.times[machine] for machine in order)
    return Instance(times, tuple(r.remap(position_of) for r in instance.rules))


def to_positions(assignment: Sequence[int], order: Sequence[int]) -> Assignment:
    return tuple(int(assignment[machine]) for machine in order)


def to_original(assignment: Sequence[int], order: Sequence[int]) -> Assignment:
    x = [0] * len(order)
    for pos, machine in enumerate(order):
        x[machine] = int(assignment[pos])
    return tuple(x)


# --------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizedInstance:
    """Instance rewritten in solver order with times rescaled to [-1, 1] totals.

    ``scaled_rules`` are the rules of ``base`` with extra costs expressed on the
    same dimensionless scale as ``scaled_times``.
    """

    base: Instance
    scaled_times: tuple[tuple[float, ...], ...]
    permutation: tuple[int, ...]
    c_min: float
    c_max: float
    scaled_rules: tuple[Rule, ...] = field(default=())

    @property
    def slope(self) -> float:
        """Factor turning a raw time difference into a scaled one."""
        span = self.c_max - self.c_min
        return 2.0 / span if span > 0 else 1.0

    def scaled_cost(self, positions: Sequence[int]) -> float:
        """Scaled total for an assignment given in solver (position) order."""
        return float(sum(row[t] for row, t in zip(self.scaled_times, positions)))

    def scaled_cost_original(self, assignment: Sequence[int]) -> float:
        return self.scaled_cost(to_positions(assignment, self.permutation))


def normalize(instance: Instance, reorder: bool = True) -> NormalizedInstance:
    """Reorder machines and map total costs affinely onto [-1, 1].

    Each time becomes ``(2 T_ij - (min_i + max_i)) / (c_max - c_min)`` where
    ``c_min``/``c_max`` are the sums of per-machine minima/maxima, so the
    cheapest assignment scores -1 and the dearest +1.
    """
    order = order_machines(instance) if reorder else tuple(range(instance.machine_count))
    base = permute_instance(instance, order)
    lows = [min(row) for row in base.times]
    highs = [max(row) for row in base.times]
    c_min, c_max = float(sum(lows)), float(sum(highs))
    span = c_max - c_min
    if span > 0:
        scaled = tuple(
            tuple((2.0 * t - (lo + hi)) / span for t in row)
            for row, lo, hi in zip(base.times, lows, highs)
        )
    else:
        scaled = tuple(tuple(0.0 for _ in row) for row in base.times)
    slope = 2.0 / span if span > 0 else 1.0
    scaled_rules = tuple(
        Rule(r.conditions, r.target_machine, r.target_tasks,
             r.extra_cost * slope if r.extra_cost else r.extra_cost)
        for r in base.rules
    )
    return NormalizedInstance(base, scaled, order, c_min, c_max, scaled_rules)


# --------------------------------------------------------------------------
# file format


def instance_from_json(doc) -> Instance:
    if not isinstance(doc, dict) or "machines" not in doc:
        raise InvalidInstanceError('instance document needs a "machines" list')
    machines = doc["machines"]
    if not isinstance(machines, list) or not all(isinstance(row, list) for row in machines):
        raise InvalidInstanceError('"machines" must be a list of time lists')
    rules = []
    for k, item in enumerate(doc.get("rules", [])):
        try:
            then = item["then"]
            tasks = then["tasks"] if "tasks" in then else [then["task"]]
            rules.append(
                Rule(
                    tuple(tuple(c) for c in item["if"]),
                    int(then["machine"]),
                    frozenset(tasks),
                    item.get("extra_cost"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInstanceError(f"rule {k}: {exc}") from exc
    return Instance(tuple(tuple(row) for row in machines), tuple(rules))


def load_instance(path: str | Path) -> Instance:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInstanceError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return instance_from_json(doc)
    except InvalidInstanceError as exc:
        raise InvalidInstanceError(f"{path}: {exc}") from exc


def dump_instance(instance: Instance) -> str:
    return json.dumps(instance.to_json(), indent=1) + "\n"


def save_instance(instance: Instance, path: str | Path) -> None:
    Path(path).write_text(dump_instance(instance))
