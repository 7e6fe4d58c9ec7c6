import numpy as np
import pytest
from hypothesis import strategies as st

from tnsched.model import Instance, Rule


@pytest.fixture
def instance_a():
    """Two machines, two tasks each, rule m0=t0 -> m1 in {0}."""
    return Instance(((0.2, 0.8), (0.5, 0.1)), (Rule.simple([(0, 0)], 1, 0),))


def random_instance(rng, m_range=(3, 5), p_range=(2, 4), rule_range=(1, 6),
                    soft=0.0, target_sets=0.0, max_conditions=2):
    """Random instance with arbitrary (possibly conflicting) rules."""
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    P = [int(rng.integers(p_range[0], p_range[1] + 1)) for _ in range(m)]
    times = tuple(tuple(float(t) for t in rng.uniform(0, 1, p)) for p in P)
    rules = []
    for _ in range(int(rng.integers(rule_range[0], rule_range[1] + 1))):
        k = int(rng.integers(1, min(max_conditions, m - 1) + 1))
        ms = [int(x) for x in rng.choice(m, k + 1, replace=False)]
        conds = tuple((a, int(rng.integers(P[a]))) for a in ms[:-1])
        target = ms[-1]
        size = 1
        if P[target] > 1 and rng.random() < target_sets:
            size += int(rng.integers(1, P[target]))
        tasks = frozenset(int(t) for t in rng.choice(P[target], size=min(size, P[target]), replace=False))
        extra = float(rng.uniform(0.01, 0.3)) if rng.random() < soft else None
        rules.append(Rule(conds, target, tasks, extra))
    return Instance(times, tuple(rules))


@st.composite
def instances(draw, max_machines=4, max_tasks=3, max_rules=4):
    m = draw(st.integers(2, max_machines))
    P = [draw(st.integers(1, max_tasks)) for _ in range(m)]
    times = tuple(
        tuple(draw(st.floats(0, 10, allow_nan=False, allow_infinity=False)) for _ in range(p))
        for p in P
    )
    rules = []
    for _ in range(draw(st.integers(0, max_rules))):
        machines = draw(st.permutations(range(m)))
        k = draw(st.integers(1, m - 1))
        conds = tuple((a, draw(st.integers(0, P[a] - 1))) for a in machines[:k])
        target = machines[k]
        tasks = draw(st.frozensets(st.integers(0, P[target] - 1), min_size=1))
        rules.append(Rule(conds, target, tasks))
    return Instance(times, tuple(rules))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def report_line(number: int, passed: bool, text: str) -> str:
    """Record one acceptance verdict; printed again in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
