"""Acceptance suite: each test checks one criterion at its stated tolerance
and prints a single PASS/FAIL line (repeated in the pytest terminal summary).
"""

import itertools
import math
import subprocess
import sys
import time
from collections import Counter

import numpy as np
import pytest

from tnsched.casegen import GenSpec, generate
from tnsched.errors import InfeasibleError, MemoryCapExceeded, NoSolutionFound
from tnsched.model import Rule, check_rules, normalize, total_cost
from tnsched.oracle import brute_force, brute_force_marginal
from tnsched.rule_compiler import compile_group, condense, group_rules, new_group
from tnsched.solvers import GeneticConfig, solve_genetic, solve_iterative
from tnsched.state_engine import build_state, marginal, solve_full

from .conftest import random_instance, report_line
from .test_rule_compiler import expected_element, layer_element

pytestmark = pytest.mark.slow

TWO_GB = 2 * 2**30
PAPER_GENETIC = dict(population=10, active_tasks_per_machine=2, rules_per_individual=6,
                     mutations_per_child=1, survival_ratio=1 / 3, max_generations=25)


def small_instance(seed, soft=0.0, target_sets=0.0):
    rng = np.random.default_rng(seed)
    return random_instance(rng, m_range=(3, 5), p_range=(2, 4), rule_range=(1, 6),
                           soft=soft, target_sets=target_sets)


# --- shared suite runs (also audited by criterion 8) ------------------------


@pytest.fixture(scope="module")
def exactness_suite():
    rows, solve_time = [], 0.0
    for seed in range(300):
        inst = small_instance(seed)
        report = brute_force(inst)
        start = time.perf_counter()
        try:
            x = solve_full(inst, tau=10.0)
        except InfeasibleError:
            x = None
        solve_time += time.perf_counter() - start
        rows.append((inst, report, x))
    return rows, solve_time


@pytest.fixture(scope="module")
def iterative_suite():
    full_scale, subset = [], []
    for seed in range(20):
        for m, bucket in ((10, full_scale), (6, subset)):
            inst = generate(GenSpec(m, 10, 30, (1, 2), seed=seed))
            start = time.perf_counter()
            try:
                x, status = solve_iterative(inst, memory_cap_bytes=TWO_GB).assignment, "ok"
            except MemoryCapExceeded:
                x, status = None, "memory_cap"
            except NoSolutionFound:
                x, status = None, "no_solution"
            bucket.append((inst, x, status, time.perf_counter() - start))
    return full_scale, subset


@pytest.fixture(scope="module")
def genetic_suite():
    big, shrunk = [], []
    for seed in range(20):
        cfg = GeneticConfig(seed=seed, **PAPER_GENETIC)
        inst = generate(GenSpec(10, 10, 1000, (2, 3), seed=seed))
        big.append((inst, solve_genetic(inst, cfg)))
        small = generate(GenSpec(6, 4, 50, (2, 3), seed=seed))
        shrunk.append((small, solve_genetic(small, cfg)))
    return big, shrunk


# --- criteria -----------------------------------------------------------------


def test_criterion_1_oracle_optimality(exactness_suite):
    rows, solve_time = exactness_suite
    eligible = [(r, x) for _, r, x in rows if r.unique and r.runner_up_gap >= 0.05]
    exact = sum(1 for r, x in eligible if x == r.optimum)
    ok = exact == len(eligible) and solve_time < 5.0
    report_line(1, ok, f"{exact}/{len(eligible)} gap>=0.05 unique optima exact, solve time {solve_time:.2f} s (< 5 s)")
    assert ok


def test_criterion_2_marginal_equivalence():
    worst, entries = 0.0, 0
    for seed in range(100):
        inst = small_instance(10_000 + seed, soft=0.3, target_sets=0.3)
        norm = normalize(inst)
        if brute_force(inst).optimum is None:
            continue
        state = build_state(norm, tau=1.0)
        for q in range(inst.machine_count):
            got = marginal(state, q)
            want = brute_force_marginal(inst, 1.0, norm.permutation[q])
            nz = want != 0
            assert np.all(got[~nz] == 0)
            worst = max(worst, float(np.max(np.abs(got[nz] - want[nz]) / want[nz], initial=0.0)))
            entries += got.size
    ok = worst <= 1e-9
    report_line(2, ok, f"{entries} marginal entries, worst relative error {worst:.2e} (<= 1e-9)")
    assert ok


def test_criterion_3_diagonal_oracle():
    tau, checked, worst_stack = 1.7, 0, 0.0
    bad = 0
    for seed in range(60):
        rng = np.random.default_rng(20_000 + seed)
        inst = random_instance(rng, m_range=(2, 5), p_range=(1, 4), rule_range=(1, 6),
                               soft=0.4, target_sets=0.3, max_conditions=3)
        counts = inst.task_counts
        for group in group_rules(inst.rules, counts):
            layer = compile_group(group, counts, tau)
            for t in layer.sites.values():
                for i, j in itertools.product(range(t.shape[0]), repeat=2):
                    if i != j and t[i, j].any():
                        bad += 1
            stacked = [compile_group(new_group(k, r, counts), counts, tau)
                       for k, r in zip(group.rule_ids, group.rules)]
            for x in itertools.product(*(range(p) for p in counts)):
                got = layer_element([layer], counts, x)
                if got != pytest.approx(expected_element(group.rules, x, tau), rel=1e-12, abs=0):
                    bad += 1
                worst_stack = max(worst_stack, abs(got - layer_element(stacked, counts, x)))
                checked += 1
    # force real condensation too: many rules sharing one span
    for seed in range(20):
        rng = np.random.default_rng(30_000 + seed)
        counts = [4, 3, 3, 4]
        rules = []
        for c in range(4):
            conds = [(0, c), (3, (c + seed) % 4)]
            if rng.random() < 0.5:
                conds.append((1, int(rng.integers(3))))
            extra = float(rng.uniform(0.1, 0.5)) if rng.random() < 0.5 else None
            rules.append(Rule(tuple(conds), 2, frozenset({int(rng.integers(3))}), extra))
        (group,) = condense(rules, range(4), counts)
        layer = compile_group(group, counts, tau)
        stacked = [compile_group(new_group(k, r, counts), counts, tau) for k, r in enumerate(rules)]
        for x in itertools.product(*(range(p) for p in counts)):
            worst_stack = max(worst_stack, abs(layer_element([layer], counts, x) - layer_element(stacked, counts, x)))
            checked += 1
    ok = bad == 0 and worst_stack <= 1e-12
    report_line(3, ok, f"{checked} basis elements, {bad} mismatches, condensed-vs-stacked max diff {worst_stack:.1e} (<= 1e-12)")
    assert ok


def test_criterion_4_normalization_bounds():
    worst, cases = 0.0, 0
    for seed in range(200):
        rng = np.random.default_rng(40_000 + seed)
        inst = random_instance(rng, m_range=(1, 5), p_range=(1, 4), rule_range=(0, 0))
        norm = normalize(inst)
        if norm.c_max == norm.c_min:
            continue
        values = [norm.scaled_cost(x) for x in itertools.product(*(range(p) for p in norm.base.task_counts))]
        worst = max(worst, abs(min(values) + 1.0), abs(max(values) - 1.0))
        cases += 1
    ok = worst <= 1e-12
    report_line(4, ok, f"{cases} instances, worst deviation from -1/+1 {worst:.1e} (<= 1e-12)")
    assert ok


def test_criterion_5_iterative_scale(iterative_suite):
    full_scale, subset = iterative_suite
    capped = sum(1 for _, _, s, _ in full_scale if s == "memory_cap")
    feasible = all(s == "ok" and not check_rules(x, inst.rules) for inst, x, s, _ in full_scale if s != "memory_cap")
    slowest = max(t for *_, t in full_scale + subset)
    exact = eligible = 0
    for inst, x, status, _ in subset:
        report = brute_force(inst)
        if not report.unique:
            continue
        eligible += 1
        if status == "ok" and math.isclose(total_cost(inst, x), report.optimal_cost, rel_tol=1e-12):
            exact += 1
    rate = exact / eligible if eligible else 0.0
    ok = feasible and slowest < 60.0 and rate >= 0.9
    report_line(5, ok, f"10x10x30 feasible on all {20 - capped} uncapped runs: {feasible}; "
                       f"m=6 subset oracle-exact {exact}/{eligible} = {rate:.0%} (>= 90%); slowest {slowest:.2f} s (< 60 s)")
    assert ok


def test_criterion_6_genetic_scale(genetic_suite):
    big, shrunk = genetic_suite
    found = [res for _, res in big if res.ranked]
    gens = Counter(res.generation_of_best for res in found)
    nonempty_rate = len(found) / len(big)
    close = 0
    for inst, res in shrunk:
        report = brute_force(inst)
        if report.optimum is None or not res.ranked:
            continue
        gap = (res.ranked[0][1] - report.optimal_cost) * normalize(inst).slope
        close += gap <= 0.1
    close_rate = close / len(shrunk)
    ok = nonempty_rate >= 0.8 and close_rate >= 0.8
    dist = ", ".join(f"{g}:{n}" for g, n in sorted(gens.items()))
    report_line(6, ok, f"10x10x1000 nonempty in <=25 generations {len(found)}/20 (>= 80%), "
                       f"generation of best {{{dist}}}; 6x4x50 within 0.1 normalized {close}/20 (>= 80%)")
    assert ok


def _run_cli(*args):
    proc = subprocess.run([sys.executable, "-m", "tnsched", *map(str, args)],
                          capture_output=True, check=False)
    return proc.returncode, proc.stdout


def test_criterion_7_determinism(tmp_path):
    inst = tmp_path / "inst.json"
    _run_cli("generate", "-m", 5, "-p", 3, "-r", 8, "--seed", 3, "-o", inst)
    commands = [
        ("generate", "-m", 10, "-p", 10, "-r", 30, "--seed", 7),
        *[("solve", inst, "--method", m, "--seed", 2) for m in ("full", "iterative", "genetic", "combined", "oracle")],
        ("verify", inst, "0,0,0,0,0"),
        ("bench", "--suite", "small", "--cases", 3, "--seed", 1),
    ]
    differing = [c[0] + ":" + (c[3] if c[0] == "solve" else "") for c in commands if _run_cli(*c) != _run_cli(*c)]
    ok = not differing
    report_line(7, ok, f"{len(commands)} commands byte-identical across two runs" + (f"; differ: {differing}" if differing else ""))
    assert ok


def test_criterion_8_feasibility_safety(exactness_suite, iterative_suite, genetic_suite):
    returned = violations = 0
    for inst, _, x in exactness_suite[0]:
        if x is not None:
            returned += 1
            violations += bool(check_rules(x, inst.rules))
    for bucket in iterative_suite:
        for inst, x, _, _ in bucket:
            if x is not None:
                returned += 1
                violations += bool(check_rules(x, inst.rules))
    for bucket in genetic_suite:
        for inst, res in bucket:
            for x, _ in res.ranked:
                returned += 1
                violations += bool(check_rules(x, inst.rules))
    ok = violations == 0 and returned > 0
    report_line(8, ok, f"{returned} returned assignments, {violations} violate a rule (zero tolerance)")
    assert ok
