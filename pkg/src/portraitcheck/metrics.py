"""FAR/FRR curves, equal error rates, demographic group deltas, and the
Bias Index.

Score orientation is fixed: a score is the predicted probability of
NON-compliance, and a sample with label 1 is truly non-compliant. At a
threshold t, FAR is the fraction of compliant samples with score >= t
(wrongly flagged) and FRR the fraction of non-compliant samples with
score < t (wrongly passed). The EER is the value where the two curves
cross, linearly interpolated between the two bracketing thresholds when
no swept threshold gives an exact crossing. Scores are swept over the
sorted distinct values plus a sentinel above the maximum.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .types import (
    ALL_REQUIREMENTS,
    AgeGroup,
    DataError,
    DemographicProfile,
    Gender,
    Origin,
    Requirement,
)


class Category(enum.Enum):
    GENDER = "gender"
    ORIGIN = "origin"
    AGE = "age"


_CATEGORY_GROUPS = {
    Category.GENDER: tuple(Gender),
    Category.ORIGIN: tuple(Origin),
    Category.AGE: tuple(AgeGroup),
}


def group_of(profile: DemographicProfile, category: Category):
    if category is Category.GENDER:
        return profile.gender
    if category is Category.ORIGIN:
        return profile.origin
    return profile.age_group


@dataclass(frozen=True)
class ScoredSample:
    """One (image, requirement) score with its ground truth and group."""

    image_id: str
    requirement: Requirement
    score: float
    label: int  # 1 = non-compliant
    group: DemographicProfile
    gated_in: bool = True


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    n_pos: int
    n_neg: int


# ---------------------------------------------------------------------------
# EER
# ---------------------------------------------------------------------------


def far_frr_curve(
    pos_scores: np.ndarray, neg_scores: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FAR and FRR evaluated at the sorted distinct scores plus a sentinel
    above the maximum. Returns (thresholds, far, frr)."""
    pos = np.sort(np.asarray(pos_scores, dtype=np.float64))
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise DataError("far_frr_curve: need at least one score of each class")
    merged = np.concatenate([pos, neg])
    thresholds = np.unique(merged)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    far = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    frr = np.searchsorted(pos, thresholds, side="left") / pos.size
    return thresholds, far, frr


def eer_from_scores(pos_scores, neg_scores) -> EerResult:
    """Equal error rate of one requirement's scores.

    Needs at least one score of each class. The FAR-FRR difference is
    non-increasing in the threshold, so the crossing is unique; an exact
    zero is returned as-is, otherwise both curves are interpolated
    linearly between the bracketing thresholds.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    thresholds, far, frr = far_frr_curve(pos, neg)
    d = far - frr
    # last index with d >= 0; d starts at +1 and ends at -1
    i = int(np.searchsorted(-d, 0.0, side="right")) - 1
    if d[i] == 0.0:
        # walk back to the first point of the zero plateau
        while i > 0 and d[i - 1] == 0.0:
            i -= 1
        return EerResult(
            eer=float(far[i]),
            threshold=float(thresholds[i]),
            n_pos=int(pos.size),
            n_neg=int(neg.size),
        )
    t = d[i] / (d[i] - d[i + 1])
    eer = far[i] + (far[i + 1] - far[i]) * t
    theta = thresholds[i] + (thresholds[i + 1] - thresholds[i]) * t
    return EerResult(
        eer=float(eer), threshold=float(theta), n_pos=int(pos.size), n_neg=int(neg.size)
    )


def eer(samples: Sequence[ScoredSample]) -> EerResult:
    """EER over the gated-in samples of one requirement."""
    reqs = {s.requirement for s in samples}
    if len(reqs) > 1:
        raise DataError(f"eer: samples span multiple requirements: {sorted(r.short_name for r in reqs)}")
    pos = [s.score for s in samples if s.gated_in and s.label == 1]
    neg = [s.score for s in samples if s.gated_in and s.label == 0]
    if not pos or not neg:
        name = next(iter(reqs)).short_name if reqs else "<empty>"
        raise DataError(
            f"eer: requirement {name} has a single class "
            f"({len(pos)} non-compliant / {len(neg)} compliant gated-in samples)"
        )
    return eer_from_scores(pos, neg)


# ---------------------------------------------------------------------------
# Per-requirement evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RequirementEvaluation:
    per_requirement: dict[Requirement, EerResult]
    skipped: dict[Requirement, str]

    @property
    def mean_eer(self) -> float:
        if not self.per_requirement:
            raise DataError("no evaluable requirements")
        return float(np.mean([r.eer for r in self.per_requirement.values()]))


def evaluate_requirements(samples: Sequence[ScoredSample]) -> RequirementEvaluation:
    """Per-requirement EERs; requirements lacking both classes are skipped
    with a reason rather than failing the whole evaluation."""
    by_req: dict[Requirement, list[ScoredSample]] = {}
    for s in samples:
        if s.gated_in:
            by_req.setdefault(s.requirement, []).append(s)
    results: dict[Requirement, EerResult] = {}
    skipped: dict[Requirement, str] = {}
    for req in ALL_REQUIREMENTS:
        subset = by_req.get(req, [])
        n_pos = sum(1 for s in subset if s.label == 1)
        n_neg = len(subset) - n_pos
        if n_pos == 0 or n_neg == 0:
            skipped[req] = f"{n_pos} non-compliant / {n_neg} compliant samples"
            continue
        results[req] = eer(subset)
    return RequirementEvaluation(per_requirement=results, skipped=skipped)


# ---------------------------------------------------------------------------
# Group evaluation and Bias Index
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupSection:
    category: Category
    overall: float
    per_group: dict  # group enum -> mean EER
    deltas: dict  # group enum -> per-group EER minus overall
    skipped: tuple[str, ...]  # "<group>:<requirement>" pairs lacking a class


def _mean_eer_over_requirements(
    samples: Sequence[ScoredSample], aggregation: str
) -> tuple[Optional[float], list[str]]:
    skipped: list[str] = []
    by_req: dict[Requirement, tuple[list[float], list[float]]] = {}
    for s in samples:
        if not s.gated_in:
            continue
        pos, neg = by_req.setdefault(s.requirement, ([], []))
        (pos if s.label == 1 else neg).append(s.score)

    if aggregation == "pooled":
        pos_all = [x for pos, _ in by_req.values() for x in pos]
        neg_all = [x for _, neg in by_req.values() for x in neg]
        if not pos_all or not neg_all:
            return None, ["<pooled>"]
        return eer_from_scores(pos_all, neg_all).eer, []

    eers = []
    for req in sorted(by_req, key=lambda r: r.value):
        pos, neg = by_req[req]
        if not pos or not neg:
            skipped.append(req.short_name)
            continue
        eers.append(eer_from_scores(pos, neg).eer)
    if not eers:
        return None, skipped
    return float(np.mean(eers)), skipped


def group_eers(
    samples: Sequence[ScoredSample],
    category: Category,
    aggregation: str = "mean",
) -> GroupSection:
    """Per-group EER within one demographic category.

    ``aggregation`` is "mean" (unweighted mean of the group's
    per-requirement EERs) or "pooled" (one EER over the group's pooled
    samples). Deltas are group minus overall.
    """
    if aggregation not in ("mean", "pooled"):
        raise DataError(f"unknown aggregation: {aggregation!r}")
    overall, _ = _mean_eer_over_requirements(samples, aggregation)
    if overall is None:
        raise DataError("group_eers: no evaluable requirement over all samples")

    per_group: dict = {}
    skipped: list[str] = []
    for group in _CATEGORY_GROUPS[category]:
        subset = [s for s in samples if group_of(s.group, category) == group]
        if not subset:
            skipped.append(f"{group.value}:<empty>")
            continue
        value, sk = _mean_eer_over_requirements(subset, aggregation)
        skipped.extend(f"{group.value}:{name}" for name in sk)
        if value is None:
            raise DataError(
                f"group_eers: group {group.value} has no evaluable requirement"
            )
        per_group[group] = value

    if not per_group:
        raise DataError(f"group_eers: no groups present for category {category.value}")
    deltas = {g: v - overall for g, v in per_group.items()}
    return GroupSection(
        category=category,
        overall=overall,
        per_group=per_group,
        deltas=deltas,
        skipped=tuple(skipped),
    )


def bias_index(group_values: Mapping[Category, Mapping]) -> float:
    """Sum over the three demographic categories of the max-min spread of
    per-group EERs."""
    total = 0.0
    for category in Category:
        if category not in group_values:
            raise DataError(f"bias_index: missing category {category.value}")
        values = list(group_values[category].values())
        if len(values) < 2:
            raise DataError(
                f"bias_index: category {category.value} needs >= 2 groups, "
                f"got {len(values)}"
            )
        total += max(values) - min(values)
    return total


# ---------------------------------------------------------------------------
# Evaluation report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    per_requirement: dict[Requirement, EerResult]
    mean_eer: float
    skipped: dict[Requirement, str] = field(default_factory=dict)
    groups: dict[Category, GroupSection] = field(default_factory=dict)
    bias_index: Optional[float] = None


def build_report(
    samples: Sequence[ScoredSample],
    categories: Sequence[Category] = tuple(Category),
    aggregation: str = "mean",
    strict: bool = True,
) -> EvalReport:
    """Full evaluation: per-requirement EERs, per-group EERs for the
    requested categories, and the Bias Index when all three categories
    are present. With ``strict`` off, categories whose groups cannot be
    evaluated are omitted instead of failing the report."""
    req_eval = evaluate_requirements(samples)
    groups: dict[Category, GroupSection] = {}
    for category in categories:
        try:
            groups[category] = group_eers(samples, category, aggregation=aggregation)
        except DataError:
            if strict:
                raise
    bi = None
    if set(groups) == set(Category):
        spreads = {c: sec.per_group for c, sec in groups.items()}
        if all(len(v) >= 2 for v in spreads.values()):
            bi = bias_index(spreads)
    return EvalReport(
        per_requirement=req_eval.per_requirement,
        mean_eer=req_eval.mean_eer,
        skipped=req_eval.skipped,
        groups=groups,
        bias_index=bi,
    )


def threshold_vector(report: EvalReport, fill: float = 0.5) -> np.ndarray:
    """The 26 EER operating thresholds, with ``fill`` for requirements the
    report could not evaluate."""
    out = np.full(len(ALL_REQUIREMENTS), fill, dtype=np.float64)
    for req, res in report.per_requirement.items():
        out[req.value - 1] = res.threshold
    return out


# --- delimited-text emission (3-decimal rounding, stable column order) -----

_REQ_HEADER = "requirement\tindex\teer\tthreshold\tn_pos\tn_neg"
_GROUP_HEADER = "category\tgroup\teer\tdelta"


def emit_report(report: EvalReport, out_dir: str | os.PathLike) -> list[str]:
    """Write the report as delimited text files; returns the paths."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    lines = [_REQ_HEADER]
    for req in ALL_REQUIREMENTS:
        if req in report.per_requirement:
            r = report.per_requirement[req]
            lines.append(
                f"{req.short_name}\t{req.value}\t{r.eer:.3f}\t{r.threshold:.3f}"
                f"\t{r.n_pos}\t{r.n_neg}"
            )
        elif req in report.skipped:
            lines.append(f"{req.short_name}\t{req.value}\tskipped\t\t\t")
    lines.append(f"average\t\t{report.mean_eer:.3f}\t\t\t")
    path = os.path.join(out_dir, "requirements.tsv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    paths.append(path)

    path = os.path.join(out_dir, "groups.tsv")
    with open(path, "w", encoding="utf-8") as fh:
        if not report.groups:
            fh.write("# no demographic sections requested; bias index omitted\n")
        else:
            glines = [_GROUP_HEADER]
            for category in Category:
                if category not in report.groups:
                    continue
                sec = report.groups[category]
                glines.append(f"{category.value}\toverall\t{sec.overall:.3f}\t0.000")
                for group in _CATEGORY_GROUPS[category]:
                    if group in sec.per_group:
                        glines.append(
                            f"{category.value}\t{group.value}"
                            f"\t{sec.per_group[group]:.3f}\t{sec.deltas[group]:+.3f}"
                        )
            if report.bias_index is not None:
                glines.append(f"bias_index\t\t{report.bias_index:.3f}\t")
            fh.write("\n".join(glines) + "\n")
    paths.append(path)
    return paths


def dump_curves(
    samples: Sequence[ScoredSample], out_dir: str | os.PathLike
) -> list[str]:
    """Write one delimited FAR/FRR curve file per evaluable requirement."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    by_req: dict[Requirement, tuple[list[float], list[float]]] = {}
    for s in samples:
        if not s.gated_in:
            continue
        pos, neg = by_req.setdefault(s.requirement, ([], []))
        (pos if s.label == 1 else neg).append(s.score)
    paths = []
    for req in sorted(by_req, key=lambda r: r.value):
        pos, neg = by_req[req]
        if not pos or not neg:
            continue
        thresholds, far, frr = far_frr_curve(np.array(pos), np.array(neg))
        path = os.path.join(out_dir, f"curve_{req.value:02d}_{req.short_name}.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("threshold\tfar\tfrr\n")
            for t, fa, fr in zip(thresholds, far, frr):
                fh.write(f"{t:.6f}\t{fa:.6f}\t{fr:.6f}\n")
        paths.append(path)
    return paths


def parse_report(out_dir: str | os.PathLike) -> EvalReport:
    """Read back a report emitted by :func:`emit_report` (values carry the
    emitted 3-decimal precision)."""
    out_dir = os.fspath(out_dir)
    per_requirement: dict[Requirement, EerResult] = {}
    skipped: dict[Requirement, str] = {}
    mean_eer = None
    with open(os.path.join(out_dir, "requirements.tsv"), "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != _REQ_HEADER:
            raise DataError(f"unexpected requirements table header: {header!r}")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "average":
                mean_eer = float(parts[2])
                continue
            req = Requirement.from_short_name(parts[0])
            if parts[2] == "skipped":
                skipped[req] = "skipped"
                continue
            per_requirement[req] = EerResult(
                eer=float(parts[2]),
                threshold=float(parts[3]),
                n_pos=int(parts[4]),
                n_neg=int(parts[5]),
            )
    if mean_eer is None:
        raise DataError("requirements table lacks an average row")

    groups: dict[Category, GroupSection] = {}
    bi = None
    groups_path = os.path.join(out_dir, "groups.tsv")
    raw_sections: dict[Category, dict] = {}
    overall: dict[Category, float] = {}
    with open(groups_path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith("#") and first != _GROUP_HEADER and first:
            raise DataError(f"unexpected groups table header: {first!r}")
        if first == _GROUP_HEADER:
            for line in fh:
                parts = line.rstrip("\n").split("\t")
                if parts[0] == "bias_index":
                    bi = float(parts[2])
                    continue
                category = Category(parts[0])
                if parts[1] == "overall":
                    overall[category] = float(parts[2])
                    continue
                group = {g.value: g for g in _CATEGORY_GROUPS[category]}[parts[1]]
                raw_sections.setdefault(category, {})[group] = float(parts[2])
    for category, per_group in raw_sections.items():
        ov = overall[category]
        groups[category] = GroupSection(
            category=category,
            overall=ov,
            per_group=per_group,
            deltas={g: round(v - ov, 3) for g, v in per_group.items()},
            skipped=(),
        )
    return EvalReport(
        per_requirement=per_requirement,
        mean_eer=mean_eer,
        skipped=skipped,
        groups=groups,
        bias_index=bi,
    )
