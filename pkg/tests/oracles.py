"""Independent oracles used to compute expected values.

These deliberately avoid the library's own code paths: rates are counted
naively per candidate threshold, marginals are re-tallied
spreadsheet-style, and gates are re-derived by restating the definitions.
"""
from __future__ import annotations

import numpy as np

from portraitcheck.types import ALL_REQUIREMENTS, LabelState


def eer_brute_force(pos_scores, neg_scores) -> tuple[float, float]:
    """Exhaustive threshold sweep.

    For every candidate threshold (each distinct score plus a sentinel
    above the maximum) FAR and FRR are counted directly; the crossing of
    the two staircase curves is then located by linear scan and
    interpolated linearly between the bracketing candidates.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    candidates = np.unique(np.concatenate([pos, neg]))
    candidates = np.append(candidates, candidates[-1] + 1.0)

    far = np.empty(candidates.size)
    frr = np.empty(candidates.size)
    chunk = 256
    for start in range(0, candidates.size, chunk):
        cs = candidates[start : start + chunk, None]
        far[start : start + chunk] = (neg[None, :] >= cs).sum(axis=1) / neg.size
        frr[start : start + chunk] = (pos[None, :] < cs).sum(axis=1) / pos.size

    prev_d = far[0] - frr[0]
    assert prev_d >= 0.0
    for i in range(candidates.size):
        d = far[i] - frr[i]
        if d == 0.0:
            return float(far[i]), float(candidates[i])
        if d < 0.0:
            d_prev = far[i - 1] - frr[i - 1]
            t = d_prev / (d_prev - d)
            eer = far[i - 1] + (far[i] - far[i - 1]) * t
            theta = candidates[i - 1] + (candidates[i] - candidates[i - 1]) * t
            return float(eer), float(theta)
    raise AssertionError("no crossing found")


def subject_marginals(records):
    """Spreadsheet-style recount: one row per subject, then tally each
    demographic column."""
    rows = {}
    for r in records:
        rows[r.subject_id] = (
            r.demographics.gender,
            r.demographics.origin,
            r.demographics.age_group,
        )
    tallies = ({}, {}, {})
    for row in rows.values():
        for i, value in enumerate(row):
            tallies[i][value] = tallies[i].get(value, 0) + 1
    n = len(rows)
    return tuple({k: 100.0 * v / n for k, v in t.items()} for t in tallies), n


def gates_by_definition(labels, rules, restricted_to=None):
    """Literal restatement of the gate definition."""
    out = {}
    triggered = set()
    for rule in rules:
        if labels[rule.trigger].state is LabelState.NON_COMPLIANT:
            triggered.update(rule.suppressed)
    for req in ALL_REQUIREMENTS:
        value = 1
        if labels[req].state is LabelState.NO_WAY_TO_CONFIRM:
            value = 0
        if req in triggered:
            value = 0
        if restricted_to is not None and req not in restricted_to:
            value = 0
        out[req] = value
    return out
