"""Per-requirement validity gates.

A gate of 0 removes a requirement from both the classification loss and
evaluation for one sample. Gates go to 0 when the label is
NoWayToConfirm, when a conflicting non-compliance in the same image makes
the requirement unverifiable (e.g. eye state behind dark tinted lenses),
or when a generated image is used outside its targeted requirements.

Rules are applied in a single pass from ground-truth labels only;
suppression never cascades and never derives from predictions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .types import (
    ALL_REQUIREMENTS,
    ComplianceLabel,
    ConfigError,
    GateVector,
    LabelState,
    Requirement,
)


@dataclass(frozen=True)
class ConflictRule:
    """When ``trigger`` is non-compliant, suppress each requirement in
    ``suppressed``."""

    trigger: Requirement
    suppressed: frozenset[Requirement]

    def __post_init__(self):
        if self.trigger in self.suppressed:
            raise ConfigError(
                f"conflict rule for {self.trigger.short_name} suppresses itself"
            )
        object.__setattr__(self, "suppressed", frozenset(self.suppressed))


_DEFAULT_RULES: tuple[ConflictRule, ...] = (
    ConflictRule(
        trigger=Requirement.DARK_TINTED_LENSES,
        suppressed=frozenset(
            {
                Requirement.EYES_CLOSED,
                Requirement.LOOKING_AWAY,
                Requirement.HAIR_ACROSS_EYES,
                Requirement.RED_EYES,
            }
        ),
    ),
    ConflictRule(
        trigger=Requirement.VEIL_OVER_FACE,
        suppressed=frozenset(
            {
                Requirement.NON_NEUTRAL_EXPRESSION,
                Requirement.MOUTH_OPEN,
            }
        ),
    ),
)


def default_conflict_rules() -> tuple[ConflictRule, ...]:
    """The shipped rule table. Generated-image restriction is not a rule
    here: it is applied through ``restricted_to`` on the record."""
    return _DEFAULT_RULES


def rules_to_config(rules: Sequence[ConflictRule]) -> list[dict]:
    return [
        {
            "trigger": rule.trigger.short_name,
            "suppressed": sorted(r.short_name for r in rule.suppressed),
        }
        for rule in rules
    ]


def rules_from_config(raw: Sequence[Mapping]) -> tuple[ConflictRule, ...]:
    rules = tuple(
        ConflictRule(
            trigger=Requirement.from_short_name(entry["trigger"]),
            suppressed=frozenset(
                Requirement.from_short_name(n) for n in entry["suppressed"]
            ),
        )
        for entry in raw
    )
    _check_acyclic(rules)
    return rules


def _check_acyclic(rules: Sequence[ConflictRule]) -> None:
    # One-pass application cannot cascade, but a cycle in the suppression
    # relation would make the rule table ambiguous to reason about.
    edges = {rule.trigger: set(rule.suppressed) for rule in rules}
    visiting: set[Requirement] = set()
    done: set[Requirement] = set()

    def visit(node: Requirement) -> None:
        if node in done:
            return
        if node in visiting:
            raise ConfigError("conflict rule set contains a suppression cycle")
        visiting.add(node)
        for nxt in edges.get(node, ()):
            visit(nxt)
        visiting.discard(node)
        done.add(node)

    for trigger in edges:
        visit(trigger)


def gate(
    labels: Mapping[Requirement, ComplianceLabel],
    rules: Optional[Sequence[ConflictRule]] = None,
    restricted_to: Optional[Sequence[Requirement]] = None,
) -> GateVector:
    """Compute the 26 validity gates for one label set.

    gates[r] is 0 iff the label is NoWayToConfirm, or a rule triggered by
    a non-compliant label suppresses r, or ``restricted_to`` is given
    (generated image) and r is not in it.
    """
    rules = default_conflict_rules() if rules is None else rules
    gates = np.ones(len(ALL_REQUIREMENTS), dtype=np.int8)

    if restricted_to is not None:
        allowed = {r.value for r in restricted_to}
        for req in ALL_REQUIREMENTS:
            if req.value not in allowed:
                gates[req.value - 1] = 0

    for req in ALL_REQUIREMENTS:
        label = labels.get(req)
        if label is None or label.state is LabelState.NO_WAY_TO_CONFIRM:
            gates[req.value - 1] = 0

    for rule in rules:
        trigger_label = labels.get(rule.trigger)
        if trigger_label is not None and trigger_label.state is LabelState.NON_COMPLIANT:
            for suppressed in rule.suppressed:
                gates[suppressed.value - 1] = 0

    return GateVector(gates=gates)
