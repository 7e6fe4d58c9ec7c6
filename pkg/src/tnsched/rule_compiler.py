"""Compile rules into stacked diagonal layers of small site tensors.

A layer covers the contiguous machines between the first and last machine
its rules touch.  Horizontal bonds carry a channel number: 0 means "no
signal", channel ``c`` means "every condition of rule ``c`` seen so far
holds".  Controls at the far ends of the span start the signal, controls in
the middle keep or drop it, and the projector on the target machine filters
the vertical index when its incoming channel(s) are active.

Several rules share one layer (condensation) when they have the same first
machine, last machine and target machine, and the machines that start their
signals see pairwise different condition tasks.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import CompileError
from .model import Rule

# --------------------------------------------------------------------------
# primitive tensors

PRIMITIVES = ("Id", "Ctrl", "Cctrl", "CProy", "CcProy")


@dataclass(frozen=True)
class PrimitiveKind:
    """One of the five building blocks with its parameters.

    ``a`` is the vertical state, ``b`` the activation channel, ``c`` the
    emitted channel (Cctrl only).  Projectors may pass a set of ``targets``
    (defaults to ``{a}``) with pass weight ``weight``.  ``legs`` selects the
    3- or 4-index identity.
    """

    name: str
    a: int = 0
    b: int = 0
    c: int = 0
    targets: frozenset[int] | None = None
    weight: float = 1.0
    legs: int = 4

    def __post_init__(self):
        if self.name not in PRIMITIVES:
            raise CompileError(f"unknown primitive {self.name!r}")


def primitive_tensor(kind: PrimitiveKind, vertical_extent: int, horizontal_extent: int) -> np.ndarray:
    """Dense tensor for ``kind`` with axes ``(v_in, v_out, h...)``.

    Ctrl, CProy and the 3-leg Id have one horizontal axis; Cctrl, CcProy and
    the 4-leg Id have two (incoming first for Cctrl, left then right for
    CcProy).
    """
    P, H = vertical_extent, horizontal_extent
    if P < 1 or H < 1:
        raise CompileError("extents must be positive")
    name = kind.name
    if name == "Id":
        if kind.legs == 3:
            t = np.zeros((P, P, H))
            for i in range(P):
                t[i, i, :] = 1.0
        else:
            t = np.zeros((P, P, H, H))
            for i in range(P):
                for j in range(H):
                    t[i, i, j, j] = 1.0
        return t

    a, b = kind.a, kind.b
    targets = kind.targets if kind.targets is not None else frozenset({a})
    if not 0 <= a < P or any(not 0 <= x < P for x in targets):
        raise CompileError(f"{name}: vertical state out of range for P={P}")
    if not 1 <= b < H:
        raise CompileError(f"{name}: channel {b} must be in 1..{H - 1}")

    if name == "Ctrl":
        t = np.zeros((P, P, H))
        for j in range(P):
            t[j, j, 0] = 1.0
        t[a, a, 0] = 0.0
        t[a, a, b] = 1.0
    elif name == "Cctrl":
        c = kind.c
        if not 1 <= c < H:
            raise CompileError(f"Cctrl: channel {c} must be in 1..{H - 1}")
        t = np.zeros((P, P, H, H))
        for i in range(P):
            for k in range(H):
                if k != b:
                    t[i, i, k, 0] = 1.0
            if i != a:
                t[i, i, b, 0] = 1.0
        t[a, a, b, c] = 1.0
    elif name == "CProy":
        t = np.zeros((P, P, H))
        for i in range(P):
            for k in range(H):
                if k != b:
                    t[i, i, k] = 1.0
        for x in targets:
            t[x, x, b] = kind.weight
    else:  # CcProy
        t = np.zeros((P, P, H, H))
        for i in range(P):
            t[i, i, :, :] = 1.0
            t[i, i, b, b] = 0.0
        for x in targets:
            t[x, x, b, b] = kind.weight
    return t


# --------------------------------------------------------------------------
# grouping


def rearrange_rules(rules: Sequence[Rule]) -> list[list[int]]:
    """Bucket rule indices by first machine, each bucket sorted by last machine."""
    buckets: dict[int, list[int]] = {}
    for k, rule in enumerate(rules):
        buckets.setdefault(rule.first_machine, []).append(k)
    return [
        sorted(buckets[first], key=lambda k: rules[k].last_machine)
        for first in sorted(buckets)
    ]


@dataclass
class RuleGroup:
    """Rules sharing one layer; rule ``rule_ids[c-1]`` owns channel ``c``."""

    rule_ids: list[int]
    rules: list[Rule]
    first: int
    last: int
    target: int
    capacity: int = 0

    @property
    def channel_of_rule(self) -> dict[int, int]:
        return {rid: c for c, rid in enumerate(self.rule_ids, start=1)}

    @property
    def size(self) -> int:
        return len(self.rules)

    def origins(self) -> list[int]:
        """Machines where signals start (span ends that are not the target)."""
        ends = []
        if self.target != self.first:
            ends.append(self.first)
        if self.target != self.last:
            ends.append(self.last)
        return ends

    def accepts(self, rule: Rule) -> bool:
        if self.size >= self.capacity:
            return False
        if (rule.first_machine, rule.last_machine, rule.target_machine) != (
            self.first, self.last, self.target
        ):
            return False
        for end in self.origins():
            value = dict(rule.conditions)[end]
            if any(dict(r.conditions)[end] == value for r in self.rules):
                return False
        return True

    def add(self, rule_id: int, rule: Rule) -> None:
        self.rule_ids.append(rule_id)
        self.rules.append(rule)


def _capacity(rule: Rule, task_counts: Sequence[int]) -> int:
    cap = task_counts[rule.first_machine]
    if rule.target_machine != rule.last_machine:
        cap = min(cap, task_counts[rule.last_machine])
    return cap


def new_group(rule_id: int, rule: Rule, task_counts: Sequence[int]) -> RuleGroup:
    return RuleGroup(
        [rule_id], [rule], rule.first_machine, rule.last_machine, rule.target_machine,
        _capacity(rule, task_counts),
    )


def condense(rules: Sequence[Rule], bucket: Sequence[int], task_counts: Sequence[int]) -> list[RuleGroup]:
    """First-fit packing of one bucket into condensed groups."""
    groups: list[RuleGroup] = []
    for k in bucket:
        rule = rules[k]
        for group in groups:
            if group.accepts(rule):
                group.add(k, rule)
                break
        else:
            groups.append(new_group(k, rule, task_counts))
    return groups


# --------------------------------------------------------------------------
# layers


@dataclass
class RuleLayer:
    """One compiled group: a site tensor ``(P, P, HL, HR)`` per machine in span."""

    group: RuleGroup
    horizontal: int
    sites: dict[int, np.ndarray]
    kinds: dict[int, str] = field(default_factory=dict)

    @property
    def span(self) -> tuple[int, int]:
        return self.group.first, self.group.last

    @property
    def target(self) -> int:
        return self.group.target

    def direction(self, machine: int) -> str:
        """Signal flow at ``machine``: toward the projector."""
        if machine == self.target:
            return "sink"
        return "right" if machine < self.target else "left"

    def describe(self) -> str:
        lo, hi = self.span
        lines = [
            f"layer span={lo}-{hi} target={self.target} H={self.horizontal} "
            f"rules={self.group.rule_ids}"
        ]
        for machine in range(lo, hi + 1):
            t = self.sites[machine]
            lines.append(
                f"  m{machine} {self.kinds.get(machine, '?')} dir={self.direction(machine)} "
                f"shape={tuple(t.shape)} nnz={int(np.count_nonzero(t))}"
            )
        return "\n".join(lines)


def _signal_map(group: RuleGroup, machine: int, P: int) -> list[dict[int, int]]:
    """For each vertical state, the channel transition ``in -> out`` at ``machine``.

    End machines emit from channel 0; middle machines map each incoming
    channel to itself or to 0.
    """
    H = group.size + 1
    conds = [dict(r.conditions) for r in group.rules]
    is_end = machine in (group.first, group.last)
    maps = []
    for v in range(P):
        if is_end:
            out = 0
            for c, cond in enumerate(conds, start=1):
                if cond[machine] == v:
                    out = c
            maps.append({0: out})
        else:
            trans = {0: 0}
            for c, cond in enumerate(conds, start=1):
                need = cond.get(machine)
                trans[c] = c if need is None or need == v else 0
            maps.append(trans)
    return maps


def _control_site(group: RuleGroup, machine: int, P: int) -> tuple[np.ndarray, str]:
    H = group.size + 1
    flow_right = machine < group.target
    is_end = machine in (group.first, group.last)
    h_in = 1 if is_end else H
    t = np.zeros((P, P, h_in, H))  # (v, v, incoming, outgoing)
    for v, trans in enumerate(_signal_map(group, machine, P)):
        for k, c in trans.items():
            t[v, v, k, c] = 1.0
    if not flow_right:
        t = t.transpose(0, 1, 3, 2)
    involved = any(machine in dict(r.conditions) for r in group.rules)
    kind = ("Ctrl" if is_end else "Cctrl") if involved else "Id"
    return t, kind


def _projector_site(group: RuleGroup, machine: int, P: int, tau: float) -> tuple[np.ndarray, str]:
    H = group.size + 1
    HL = 1 if machine == group.first else H
    HR = 1 if machine == group.last else H
    two_sided = HL > 1 and HR > 1
    t = np.zeros((P, P, HL, HR))
    for k in range(HL):
        for l in range(HR):
            if two_sided:
                active = k if k == l and k != 0 else 0
            else:
                active = k if HL > 1 else l
            if active == 0:
                for i in range(P):
                    t[i, i, k, l] = 1.0
                continue
            rule = group.rules[active - 1]
            weight = float(np.exp(-tau * rule.extra_cost)) if rule.extra_cost else 1.0
            for x in rule.target_tasks:
                t[x, x, k, l] = weight
    return t, "CcProy" if two_sided else "CProy"


def compile_group(group: RuleGroup, task_counts: Sequence[int], tau: float) -> RuleLayer:
    """Build the site tensors of one layer.

    ``task_counts`` are per position and ``tau`` scales soft-rule weights
    ``exp(-tau * extra)`` (extras already on the scaled cost axis).
    """
    for rule in group.rules:
        if (rule.first_machine, rule.last_machine, rule.target_machine) != (
            group.first, group.last, group.target
        ):
            raise CompileError(f"group {group.rule_ids} mixes spans or targets")
    if group.size > task_counts[group.first]:
        raise CompileError(f"group of {group.size} rules exceeds P={task_counts[group.first]}")
    for end in group.origins():
        values = [dict(r.conditions)[end] for r in group.rules]
        if len(set(values)) != len(values):
            raise CompileError(f"group {group.rule_ids}: repeated condition task on machine {end}")
    sites, kinds = {}, {}
    for machine in range(group.first, group.last + 1):
        P = task_counts[machine]
        if machine == group.target:
            sites[machine], kinds[machine] = _projector_site(group, machine, P, tau)
        else:
            sites[machine], kinds[machine] = _control_site(group, machine, P)
    return RuleLayer(group, group.size + 1, sites, kinds)


def group_rules(rules: Sequence[Rule], task_counts: Sequence[int]) -> list[RuleGroup]:
    groups = []
    for bucket in rearrange_rules(rules):
        groups.extend(condense(rules, bucket, task_counts))
    return groups


def compile_all(rules: Sequence[Rule], task_counts: Sequence[int], tau: float) -> list[RuleLayer]:
    """Rearrange, condense and compile; layers come back in stacking order."""
    return [compile_group(g, task_counts, tau) for g in group_rules(rules, task_counts)]


def dump_layers(layers: Sequence[RuleLayer]) -> str:
    return "\n".join(layer.describe() for layer in layers) + ("\n" if layers else "")
