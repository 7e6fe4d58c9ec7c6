"""Scalable drivers around the tensor-network engine.

``solve_iterative`` injects rules only when the current candidate breaks
them; ``solve_genetic`` evolves small sub-problems (a few activable tasks
per machine, a few rules) and keeps the globally feasible answers.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import InfeasibleError, NoSolutionFound
from .model import (
    Assignment,
    Instance,
    NormalizedInstance,
    Rule,
    check_rules,
    normalize,
    to_original,
    total_cost,
)
from .rule_compiler import new_group
from .state_engine import DEFAULT_TAU, SolveTrace, solve_positions

log = logging.getLogger(__name__)


def _from_dict(cls, doc: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**doc)


@dataclass(frozen=True)
class IterativeConfig:
    max_iterations: int = 50
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> IterativeConfig:
        return _from_dict(cls, doc)


@dataclass(frozen=True)
class GeneticConfig:
    population: int = 10
    active_tasks_per_machine: int = 2
    rules_per_individual: int = 6
    mutations_per_child: int = 1
    survival_ratio: float = 1 / 3
    max_generations: int = 25
    crossover_swaps: int = 1
    seed: int = 0
    tau: float = DEFAULT_TAU
    patience: int = 10

    def __post_init__(self):
        if self.population < 1 or self.active_tasks_per_machine < 1:
            raise ValueError("population and active_tasks_per_machine must be positive")
        if self.rules_per_individual < 0 or self.mutations_per_child < 0 or self.crossover_swaps < 0:
            raise ValueError("rule, mutation and swap counts must be nonnegative")
        if not 0 < self.survival_ratio <= 1:
            raise ValueError("survival_ratio must be in (0, 1]")
        if self.survival_ratio * self.population < 1 - 1e-9:
            raise ValueError("survival_ratio * population must be at least 1")
        if self.max_generations < 1:
            raise ValueError("max_generations must be positive")

    @property
    def survivors(self) -> int:
        return max(1, math.ceil(self.survival_ratio * self.population - 1e-9))

    @classmethod
    def from_dict(cls, doc: dict) -> GeneticConfig:
        return _from_dict(cls, doc)


# --------------------------------------------------------------------------
# iterative


def unrestricted_minimum(
    norm: NormalizedInstance, forbidden: set[tuple[int, int]] | frozenset = frozenset()
) -> Assignment:
    """Per-machine cheapest allowed task (position order, lowest index on ties)."""
    out = []
    for i, row in enumerate(norm.scaled_times):
        best = min((t for t in range(len(row)) if (i, t) not in forbidden), key=lambda t: (row[t], t))
        out.append(best)
    return tuple(out)


@dataclass
class IterativeResult:
    assignment: Assignment
    iterations: int
    active_rules: list[int]
    max_boundary: int = 1


def _injection(rules: Sequence[Rule], seed_rule: int, active: set[int], task_counts) -> list[int]:
    """The violated rule plus every inactive rule that condenses with it."""
    group = new_group(seed_rule, rules[seed_rule], task_counts)
    for k, rule in enumerate(rules):
        if k in active or k == seed_rule:
            continue
        if group.accepts(rule):
            group.add(k, rule)
    return group.rule_ids


def iterate_positions(
    norm: NormalizedInstance,
    rule_ids: Sequence[int] | None = None,
    config: IterativeConfig = IterativeConfig(),
    forbidden: frozenset[tuple[int, int]] = frozenset(),
    memory_cap_bytes: int | None = None,
) -> IterativeResult:
    """Iterative rule injection in position space over ``rule_ids`` (default: all rules).

    The returned assignment is in position order.
    """
    all_rules = norm.scaled_rules
    ids = list(range(len(all_rules))) if rule_ids is None else list(rule_ids)
    goal = [all_rules[k] for k in ids]
    task_counts = norm.base.task_counts
    candidate = unrestricted_minimum(norm, forbidden)
    active: list[int] = []  # indices into goal
    max_boundary = 1
    iterations = 0
    while True:
        violated = check_rules(candidate, goal)
        if not violated:
            return IterativeResult(candidate, iterations, [ids[k] for k in active], max_boundary)
        if iterations >= config.max_iterations:
            raise NoSolutionFound(f"no feasible assignment after {iterations} rule injections")
        iterations += 1
        injected = _injection(goal, violated[0], set(active), task_counts)
        active.extend(injected)
        trace = SolveTrace()
        try:
            candidate = solve_positions(
                norm, config.tau, [goal[k] for k in active], forbidden, memory_cap_bytes, trace
            )
        except InfeasibleError as exc:
            raise NoSolutionFound(f"active rules became infeasible: {exc}") from exc
        max_boundary = max(max_boundary, trace.max_boundary)
        log.debug("iteration %d: +%d rules, candidate %s", iterations, len(injected), candidate)


def solve_iterative(
    instance: Instance,
    config: IterativeConfig = IterativeConfig(),
    memory_cap_bytes: int | None = None,
) -> IterativeResult:
    """Iterative solve; the result's assignment is in the instance's numbering.

    Raises NoSolutionFound when the injection budget runs out or the rules
    admit no assignment.
    """
    norm = normalize(instance)
    res = iterate_positions(norm, None, config, memory_cap_bytes=memory_cap_bytes)
    res.assignment = to_original(res.assignment, norm.permutation)
    return res


# --------------------------------------------------------------------------
# genetic


@dataclass
class Individual:
    chromosomes: tuple[tuple[int, ...], ...]  # per position, sorted activable tasks
    phenotype: tuple[int, ...]  # rule indices, sorted
    result: Assignment | None = None  # position order
    cost: float = math.inf  # raw total cost of result
    feasible_globally: bool | None = None
    violations: int | None = None  # global rules broken by result

    @property
    def key(self) -> tuple:
        return (self.chromosomes, self.phenotype)

    def rank_key(self) -> tuple:
        violations = math.inf if self.violations is None else self.violations
        return (not self.feasible_globally, violations, self.cost, self.key)


def _compatible(a: Rule, b: Rule) -> bool:
    if frozenset(a.conditions) == frozenset(b.conditions) and a.target_machine == b.target_machine:
        return bool(a.target_tasks & b.target_tasks)
    return True


def _supported(rule: Rule, chromosomes) -> bool:
    return all(t in chromosomes[m] for m, t in rule.conditions)


def crossover(
    parent_a: Individual, parent_b: Individual, swaps: int, rng: np.random.Generator
) -> tuple[Individual, Individual]:
    """Swap single activable tasks between the parents, machine by machine.

    Each swap picks a random machine and one task from each parent; a draw
    that would duplicate a task inside either chromosome is redrawn (the
    swap is skipped if no valid exchange exists on that machine).
    """
    a = [list(c) for c in parent_a.chromosomes]
    b = [list(c) for c in parent_b.chromosomes]
    m = len(a)
    for _ in range(swaps):
        machine = int(rng.integers(m))
        options = [(i, j) for i, ta in enumerate(a[machine]) for j, tb in enumerate(b[machine])
                   if ta != tb and ta not in b[machine] and tb not in a[machine]]
        if not options:
            continue
        i, j = options[int(rng.integers(len(options)))]
        a[machine][i], b[machine][j] = b[machine][j], a[machine][i]
    child_a = Individual(tuple(tuple(sorted(c)) for c in a), parent_a.phenotype)
    child_b = Individual(tuple(tuple(sorted(c)) for c in b), parent_b.phenotype)
    return child_a, child_b


def mutate(individual: Individual, mutations: int, task_counts: Sequence[int], rng: np.random.Generator) -> Individual:
    """Replace ``mutations`` random active tasks with inactive ones on the same machine."""
    chrom = [list(c) for c in individual.chromosomes]
    candidates = [i for i, c in enumerate(chrom) if len(c) < task_counts[i]]
    for _ in range(mutations):
        if not candidates:
            break
        machine = candidates[int(rng.integers(len(candidates)))]
        slot = int(rng.integers(len(chrom[machine])))
        inactive = [t for t in range(task_counts[machine]) if t not in chrom[machine]]
        chrom[machine][slot] = inactive[int(rng.integers(len(inactive)))]
    return Individual(tuple(tuple(sorted(c)) for c in chrom), individual.phenotype)


def repair_rules(
    individual: Individual, all_rules: Sequence[Rule], quota: int, rng: np.random.Generator
) -> Individual:
    """Drop unsupported phenotype rules, then refill with random compatible supported ones."""
    chrom = [set(c) for c in individual.chromosomes]
    kept = [k for k in individual.phenotype if _supported(all_rules[k], chrom)]
    kept = kept[:quota]
    if len(kept) < quota:
        pool = [
            k for k, rule in enumerate(all_rules)
            if k not in kept and _supported(rule, chrom)
        ]
        order = rng.permutation(len(pool)) if pool else []
        for idx in order:
            k = pool[int(idx)]
            if all(_compatible(all_rules[k], all_rules[j]) for j in kept):
                kept.append(k)
                if len(kept) >= quota:
                    break
    return Individual(individual.chromosomes, tuple(sorted(kept)))


def random_individual(
    task_counts: Sequence[int], config: GeneticConfig, all_rules: Sequence[Rule], rng: np.random.Generator
) -> Individual:
    chrom = tuple(
        tuple(sorted(int(t) for t in rng.choice(p, size=min(config.active_tasks_per_machine, p), replace=False)))
        for p in task_counts
    )
    return repair_rules(Individual(chrom, ()), all_rules, config.rules_per_individual, rng)


@dataclass
class GeneticResult:
    ranked: list[tuple[Assignment, float]]  # instance numbering, raw total cost
    generations: int
    history: list[dict] = field(default_factory=list)
    generation_of_best: int | None = None
    evaluations: int = 0


Evaluator = Callable[[NormalizedInstance, Individual, frozenset], Assignment]


def _evaluate_full(norm: NormalizedInstance, ind: Individual, forbidden, tau: float, cap) -> Assignment:
    rules = [norm.scaled_rules[k] for k in ind.phenotype]
    return solve_positions(norm, tau, rules, forbidden, cap)


def solve_genetic(
    instance: Instance,
    config: GeneticConfig = GeneticConfig(),
    evaluation: str = "full",
    iterative_config: IterativeConfig | None = None,
    memory_cap_bytes: int | None = None,
    on_generation: Callable[[dict], None] | None = None,
) -> GeneticResult:
    """Genetic search over activable-task subsets and rule subsets.

    ``evaluation`` is ``"full"`` (all phenotype rules at once) or
    ``"iterative"`` (rule injection over the phenotype).  The ranked output
    holds every distinct globally feasible result seen, cheapest first.
    """
    if evaluation not in ("full", "iterative"):
        raise ValueError(f"unknown evaluation mode {evaluation!r}")
    norm = normalize(instance)
    task_counts = norm.base.task_counts
    if config.active_tasks_per_machine > min(task_counts):
        raise ValueError("active_tasks_per_machine exceeds the smallest task count")
    rules = norm.base.rules
    rng = np.random.default_rng(config.seed)
    iter_cfg = iterative_config or IterativeConfig(tau=config.tau)
    cache: dict[tuple, Individual] = {}
    archive: dict[Assignment, float] = {}
    result = GeneticResult([], 0)

    def evaluate(ind: Individual) -> Individual:
        if ind.key in cache:
            return cache[ind.key]
        allowed = [set(c) for c in ind.chromosomes]
        forbidden = frozenset(
            (i, t) for i, p in enumerate(task_counts) for t in range(p) if t not in allowed[i]
        )
        try:
            if evaluation == "full":
                x = _evaluate_full(norm, ind, forbidden, config.tau, memory_cap_bytes)
            else:
                x = iterate_positions(norm, ind.phenotype, iter_cfg, forbidden, memory_cap_bytes).assignment
        except (InfeasibleError, NoSolutionFound):
            x = None
        result.evaluations += 1
        if x is not None:
            ind.result = x
            ind.cost = total_cost(norm.base, x)
            ind.violations = len(check_rules(x, rules))
            ind.feasible_globally = ind.violations == 0
            if ind.feasible_globally:
                archive.setdefault(x, ind.cost)
        else:
            ind.feasible_globally = False
        cache[ind.key] = ind
        return ind

    def fresh() -> Individual:
        return random_individual(task_counts, config, rules, rng)

    def fill(pop: list[Individual]) -> list[Individual]:
        seen = set()
        unique = []
        for ind in pop:
            if ind.key not in seen:
                seen.add(ind.key)
                unique.append(ind)
        unique = unique[: config.population]
        tries = 0
        while len(unique) < config.population and tries < 100 * config.population:
            tries += 1
            ind = fresh()
            if ind.key not in seen:
                seen.add(ind.key)
                unique.append(ind)
        return unique

    population = fill([fresh() for _ in range(config.population)])
    best_cost = math.inf
    stable = 0
    for generation in range(1, config.max_generations + 1):
        population = [evaluate(ind) for ind in population]
        population.sort(key=Individual.rank_key)
        survivors = population[: config.survivors]
        feasible_count = sum(1 for ind in population if ind.feasible_globally)
        gen_best = min(archive.values()) if archive else math.inf
        record = {
            "generation": generation,
            "best_cost": None if math.isinf(gen_best) else gen_best,
            "feasible_count": feasible_count,
        }
        result.history.append(record)
        if on_generation:
            on_generation(record)
        result.generations = generation
        if gen_best < best_cost:
            best_cost = gen_best
            result.generation_of_best = generation
            stable = 0
        elif not math.isinf(best_cost):
            stable += 1
            if stable >= config.patience:
                break
        if generation == config.max_generations:
            break

        children: list[Individual] = []
        for i in range(0, len(survivors) - 1, 2):
            for child in crossover(survivors[i], survivors[i + 1], config.crossover_swaps, rng):
                children.append(repair_rules(child, rules, config.rules_per_individual, rng))
        for parent in survivors:
            child = mutate(parent, config.mutations_per_child, task_counts, rng)
            children.append(repair_rules(child, rules, config.rules_per_individual, rng))
        # survivors first: elitism keeps them through truncation
        population = fill(survivors + [cache.get(c.key, c) for c in children])

    ranked = sorted(archive.items(), key=lambda item: (item[1], item[0]))
    result.ranked = [(to_original(x, norm.permutation), c) for x, c in ranked]
    return result


def solve_combined(
    instance: Instance,
    iterative_config: IterativeConfig = IterativeConfig(),
    genetic_config: GeneticConfig = GeneticConfig(),
    memory_cap_bytes: int | None = None,
    on_generation: Callable[[dict], None] | None = None,
) -> GeneticResult:
    """Genetic search whose individuals are solved by iterative rule injection."""
    return solve_genetic(
        instance, genetic_config, "iterative", iterative_config, memory_cap_bytes, on_generation
    )


def config_to_json(config) -> str:
    return json.dumps(asdict(config), sort_keys=True)
