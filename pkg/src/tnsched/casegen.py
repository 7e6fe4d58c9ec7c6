"""Seeded random instances with pairwise compatible rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GenerationError
from .model import Instance, Rule


@dataclass(frozen=True)
class GenSpec:
    machines: int
    tasks_per_machine: int
    rule_count: int
    conditions_per_rule: tuple[int, int] = (1, 2)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.conditions_per_rule
        if self.machines < 1 or self.tasks_per_machine < 1 or self.rule_count < 0:
            raise ValueError("machines and tasks must be positive, rule_count nonnegative")
        if not 1 <= lo <= hi:
            raise ValueError("conditions_per_rule must be an increasing positive range")
        if self.rule_count and self.machines < lo + 1:
            raise ValueError(f"{lo} conditions plus a target need at least {lo + 1} machines")


def _conflicts(rule: Rule, seen: dict) -> bool:
    key = (frozenset(rule.conditions), rule.target_machine)
    return key in seen


def generate(spec: GenSpec, max_attempts: int | None = None) -> Instance:
    """Uniform(0, 1) times and ``rule_count`` mutually compatible rules.

    A candidate is rejected when an accepted rule already has the same
    condition set and target machine (a different target task would
    contradict it; the same one would duplicate it).
    """
    rng = np.random.default_rng(spec.seed)
    m, P = spec.machines, spec.tasks_per_machine
    times = rng.uniform(0.0, 1.0, size=(m, P))
    lo, hi = spec.conditions_per_rule
    hi = min(hi, m - 1)
    budget = max_attempts if max_attempts is not None else 200 * spec.rule_count + 1000
    seen: dict = {}
    rules: list[Rule] = []
    attempts = 0
    while len(rules) < spec.rule_count:
        if attempts >= budget:
            raise GenerationError(
                f"placed {len(rules)} of {spec.rule_count} compatible rules in {budget} attempts"
            )
        attempts += 1
        k = int(rng.integers(lo, hi + 1))
        picked = rng.choice(m, size=k + 1, replace=False)
        conds = tuple(sorted((int(mc), int(rng.integers(P))) for mc in picked[:k]))
        rule = Rule.simple(conds, int(picked[k]), int(rng.integers(P)))
        if _conflicts(rule, seen):
            continue
        seen[(frozenset(rule.conditions), rule.target_machine)] = rule
        rules.append(rule)
    return Instance(tuple(map(tuple, times.tolist())), tuple(rules))


def compatible(rules) -> bool:
    """True when no two rules share a condition set and target machine with different targets."""
    by_key: dict = {}
    for rule in rules:
        key = (frozenset(rule.conditions), rule.target_machine)
        if key in by_key and by_key[key] != rule.target_tasks:
            return False
        by_key.setdefault(key, rule.target_tasks)
    return True
