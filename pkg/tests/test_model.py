import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnsched.errors import InvalidAssignmentError, InvalidInstanceError
from tnsched.model import (
    Instance,
    Rule,
    check_rules,
    cost,
    instance_from_json,
    inverse_permutation,
    load_instance,
    normalize,
    order_machines,
    permute_instance,
    save_instance,
    to_original,
    to_positions,
    total_cost,
)

from .conftest import instances

T2 = ((0.2, 0.8), (0.5, 0.1))


def cost_table(times):
    return {x: sum(row[t] for row, t in zip(times, x))
            for x in itertools.product(*(range(len(r)) for r in times))}


@pytest.mark.parametrize("x, expected", [((0, 1), 0.3), ((1, 0), 1.3)])
def test_cost_matches_table(x, expected):
    inst = Instance(T2)
    assert cost(inst, x) == pytest.approx(expected, abs=1e-15)
    assert cost(inst, x) == pytest.approx(cost_table(T2)[x], abs=1e-15)


def test_cost_zero_times():
    assert cost(Instance(((0.0, 0.0), (0.0,))), (1, 0)) == 0.0


@pytest.mark.parametrize("bad", [(0,), (2, 0), (0, -1), (0, 0, 0)])
def test_cost_rejects_bad_assignment(bad):
    with pytest.raises(InvalidAssignmentError):
        cost(Instance(T2), bad)


def test_total_cost_adds_fired_extras():
    inst = Instance(T2, (Rule.simple([(0, 0)], 1, 0, extra_cost=0.25),))
    assert total_cost(inst, (0, 0)) == pytest.approx(0.7 + 0.25)
    assert total_cost(inst, (1, 0)) == pytest.approx(1.3)


def test_normalize_example():
    norm = normalize(Instance(T2))
    assert norm.c_min == pytest.approx(0.3)
    assert norm.c_max == pytest.approx(1.3)
    assert norm.scaled_cost_original((0, 1)) == pytest.approx(-1.0, abs=1e-12)
    assert norm.scaled_cost_original((1, 0)) == pytest.approx(1.0, abs=1e-12)


def test_normalize_degenerate():
    norm = normalize(Instance(((5.0, 5.0),)))
    assert norm.scaled_times == ((0.0, 0.0),)


@settings(max_examples=60, deadline=None)
@given(instances(max_machines=5, max_tasks=3, max_rules=0))
def test_normalized_extremes_are_unit(inst):
    norm = normalize(inst)
    if norm.c_max - norm.c_min < 1e-9:
        return
    values = [norm.scaled_cost(x) for x in itertools.product(*(range(p) for p in norm.base.task_counts))]
    assert min(values) == pytest.approx(-1.0, abs=1e-12)
    assert max(values) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(instances(max_machines=4, max_tasks=3, max_rules=0))
def test_normalization_is_increasing_affine(inst):
    norm = normalize(inst)
    xs = list(itertools.product(*(range(p) for p in inst.task_counts)))
    raw = np.array([cost(inst, x) for x in xs])
    scaled = np.array([norm.scaled_cost_original(x) for x in xs])
    if norm.c_max > norm.c_min:
        np.testing.assert_allclose(scaled, (2 * raw - norm.c_max - norm.c_min) / (norm.c_max - norm.c_min),
                                   atol=1e-12)
        assert int(np.argmin(scaled)) == int(np.argmin(raw)) or np.isclose(raw.min(), raw[np.argmin(scaled)])


def _counts_instance(counts):
    """Instance whose machine i appears in exactly counts[i] rules."""
    m = len(counts)
    rules = []
    remaining = list(counts)
    # rules pairing machines until counts are met; a spare machine absorbs odd leftovers
    while any(remaining):
        i = max(range(m), key=lambda k: remaining[k])
        j = max((k for k in range(m) if k != i), key=lambda k: remaining[k])
        if remaining[j] == 0:
            raise AssertionError("cannot realise counts")
        rules.append(Rule.simple([(i, len(rules) % 2)], j, 0))
        remaining[i] -= 1
        remaining[j] -= 1
    return Instance(tuple((0.0, 1.0) for _ in range(m)), tuple(rules))


def test_order_machines_reference_example():
    inst = _counts_instance([3, 2, 1, 7, 3])
    order = order_machines(inst)
    assert order == (2, 4, 3, 0, 1)
    assert to_positions((4, 5, 10, 2, 7), order) == (10, 7, 2, 4, 5)


def test_order_machines_equal_counts_tie_break():
    # ascending count, ties by descending index, dealt left/right inwards
    assert order_machines(Instance(((1.0,), (1.0,), (1.0,)))) == (2, 0, 1)


@settings(max_examples=50, deadline=None)
@given(instances(max_machines=6))
def test_order_is_bijection_and_invertible(inst):
    order = order_machines(inst)
    assert sorted(order) == list(range(inst.machine_count))
    permuted = permute_instance(inst, order)
    back = permute_instance(permuted, inverse_permutation(order))
    assert back == inst
    x = tuple(p - 1 for p in inst.task_counts)
    assert to_original(to_positions(x, order), order) == x


@pytest.mark.parametrize("x, expected", [((0, 1), [0]), ((1, 1), []), ((0, 0), [])])
def test_check_rules_examples(x, expected):
    assert check_rules(x, [Rule.simple([(0, 0)], 1, 0)]) == expected


@settings(max_examples=80, deadline=None)
@given(instances(), st.data())
def test_check_rules_matches_predicate(inst, data):
    x = tuple(data.draw(st.integers(0, p - 1)) for p in inst.task_counts)
    holds = all(
        (not all(x[m] == t for m, t in r.conditions)) or x[r.target_machine] in r.target_tasks
        for r in inst.rules
    )
    assert (check_rules(x, inst.rules) == []) == holds


@pytest.mark.parametrize("kwargs", [
    dict(conditions=((0, 0),), target_machine=0, target_tasks=frozenset({1})),
    dict(conditions=((0, 0), (0, 1)), target_machine=1, target_tasks=frozenset({0})),
    dict(conditions=(), target_machine=1, target_tasks=frozenset({0})),
    dict(conditions=((0, 0),), target_machine=1, target_tasks=frozenset()),
])
def test_rule_validation(kwargs):
    with pytest.raises(InvalidInstanceError):
        Rule(**kwargs)


def test_instance_rejects_out_of_range_rule():
    with pytest.raises(InvalidInstanceError):
        Instance(T2, (Rule.simple([(0, 5)], 1, 0),))
    with pytest.raises(InvalidInstanceError):
        Instance(T2, (Rule.simple([(0, 0)], 3, 0),))


def test_json_round_trip(tmp_path, instance_a):
    inst = Instance(T2, instance_a.rules + (Rule(((1, 1),), 0, frozenset({0, 1}), 0.5),))
    path = tmp_path / "i.json"
    save_instance(inst, path)
    assert load_instance(path) == inst
    doc = json.loads(path.read_text())
    assert doc["rules"][0] == {"if": [[0, 0]], "then": {"machine": 1, "tasks": [0]}}


def test_load_reports_line_on_syntax_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n "machines": [[1, 2],\n}')
    with pytest.raises(InvalidInstanceError, match=r":3:"):
        load_instance(path)


def test_schema_errors():
    with pytest.raises(InvalidInstanceError):
        instance_from_json({"rules": []})
    with pytest.raises(InvalidInstanceError, match="rule 0"):
        instance_from_json({"machines": [[1, 2], [3]], "rules": [{"if": [[0, 0]]}]})
