"""Manifest ingestion, dataset auditing, loss-weight derivation, and
demographically balanced subset selection.

A manifest is newline-delimited JSON, one record per line, UTF-8, with the
field names of :class:`~portraitcheck.types.ImageRecord`. See
``docs/manifest-schema.json`` for the full schema.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .gating import ConflictRule, default_conflict_rules, gate
from .types import (
    AgeGroup,
    ALL_REQUIREMENTS,
    DataError,
    Gender,
    ImageRecord,
    LabelState,
    N_MASK_REGIONS,
    Origin,
    Partition,
    QualityTier,
    ReasonRegistry,
    Requirement,
    parse_record_line,
    serialize_record,
    validate_record,
)

# ---------------------------------------------------------------------------
# Loading / saving
# ---------------------------------------------------------------------------


def read_manifest(
    path: str | os.PathLike,
    registry: Optional[ReasonRegistry] = None,
    lenient: bool = False,
) -> tuple[list[ImageRecord], list[str]]:
    """Parse and validate a manifest, collecting every problem.

    Returns (records, errors). Ordering of records follows the file. Parse
    errors name the line, validation errors name the image_id.
    """
    records: list[ImageRecord] = []
    errors: list[str] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = parse_record_line(line)
            except DataError as exc:
                errors.append(f"line {line_no}: {exc}")
                continue
            if record.image_id in seen:
                errors.append(
                    f"line {line_no}: duplicate image_id {record.image_id!r} "
                    f"(first seen on line {seen[record.image_id]})"
                )
                continue
            seen[record.image_id] = line_no
            violations = validate_record(record, registry=registry, lenient=lenient)
            for v in violations:
                errors.append(f"image_id {record.image_id!r}: {v}")
            if not violations:
                records.append(record)
    return records, errors


def load_manifest(
    path: str | os.PathLike,
    registry: Optional[ReasonRegistry] = None,
    lenient: bool = False,
) -> list[ImageRecord]:
    """Load a manifest, raising DataError listing every parse or
    validation problem found."""
    records, errors = read_manifest(path, registry=registry, lenient=lenient)
    if errors:
        raise DataError("; ".join(errors))
    return records


def save_manifest(records: Iterable[ImageRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(serialize_record(record))
            fh.write("\n")


def filter_partition(
    records: Sequence[ImageRecord], partition: Partition
) -> list[ImageRecord]:
    if partition is Partition.ALL:
        return list(records)
    return [r for r in records if r.partition is partition]


def partition_leakage(records: Sequence[ImageRecord]) -> list[str]:
    """Subject ids that appear in both a train-side and the test partition."""
    train_side = {Partition.TRAIN, Partition.TRAIN_BALANCED}
    train_subjects = {r.subject_id for r in records if r.partition in train_side}
    test_subjects = {r.subject_id for r in records if r.partition is Partition.TEST}
    return sorted(train_subjects & test_subjects)


# ---------------------------------------------------------------------------
# Distribution statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistributionTable:
    """Demographic and tier distribution of a record set.

    Demographic counts are over unique subjects; image counts are over
    records. Percentages within a category sum to 100 up to rounding.
    """

    n_subjects: int
    n_images_per_tier: dict[QualityTier, int]
    gender_counts: dict[Gender, int]
    origin_counts: dict[Origin, int]
    age_counts: dict[AgeGroup, int]

    def percentages(self, counts: dict) -> dict:
        total = sum(counts.values())
        if total == 0:
            return {k: 0.0 for k in counts}
        return {k: 100.0 * v / total for k, v in counts.items()}

    @property
    def gender_pct(self) -> dict[Gender, float]:
        return self.percentages(self.gender_counts)

    @property
    def origin_pct(self) -> dict[Origin, float]:
        return self.percentages(self.origin_counts)

    @property
    def age_pct(self) -> dict[AgeGroup, float]:
        return self.percentages(self.age_counts)


def distribution_stats(records: Sequence[ImageRecord]) -> DistributionTable:
    """Demographic/tier table over the given records.

    Demographics are counted once per subject; a subject appearing with
    conflicting profiles is a data error.
    """
    if not records:
        raise DataError("distribution_stats: empty record sequence")

    profiles: dict[str, tuple] = {}
    tier_counts = {tier: 0 for tier in QualityTier}
    for r in records:
        tier_counts[r.quality_tier] += 1
        key = (r.demographics.gender, r.demographics.origin, r.demographics.age_group)
        prev = profiles.get(r.subject_id)
        if prev is None:
            profiles[r.subject_id] = key
        elif prev != key:
            raise DataError(
                f"conflicting demographics for subject {r.subject_id!r}"
            )

    gender_counts = {g: 0 for g in Gender}
    origin_counts = {o: 0 for o in Origin}
    age_counts = {a: 0 for a in AgeGroup}
    for gender, origin, age in profiles.values():
        gender_counts[gender] += 1
        origin_counts[origin] += 1
        age_counts[age] += 1

    return DistributionTable(
        n_subjects=len(profiles),
        n_images_per_tier=tier_counts,
        gender_counts=gender_counts,
        origin_counts=origin_counts,
        age_counts=age_counts,
    )


# ---------------------------------------------------------------------------
# Compliance distribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RequirementCounts:
    n_compliant: int
    n_noncompliant: int
    n_generated_noncompliant: int

    @property
    def n_noncompliant_total(self) -> int:
        return self.n_noncompliant + self.n_generated_noncompliant

    @property
    def pct_noncompliant(self) -> float:
        denom = self.n_compliant + self.n_noncompliant_total
        if denom == 0:
            return 0.0
        return 100.0 * self.n_noncompliant_total / denom


@dataclass(frozen=True)
class ComplianceDistribution:
    per_requirement: dict[Requirement, RequirementCounts]


def compliance_distribution(records: Sequence[ImageRecord]) -> ComplianceDistribution:
    """Compliant vs non-compliant counts per requirement.

    NoWayToConfirm labels are excluded from both sides. Generated records
    contribute only to the requirements they are restricted to, and their
    non-compliances are tallied separately.
    """
    if not records:
        raise DataError("compliance_distribution: empty record sequence")

    # Audit-scale manifests often share label-map objects between records;
    # group by identity so each distinct map is scanned once.
    occurrences: dict[tuple, int] = {}
    exemplars: dict[tuple, ImageRecord] = {}
    for record in records:
        key = (
            id(record.labels),
            record.quality_tier is QualityTier.GEN,
            record.restricted_to,
        )
        occurrences[key] = occurrences.get(key, 0) + 1
        exemplars.setdefault(key, record)

    # index 0: compliant, 1: natural NC, 2: generated NC
    counts = np.zeros((len(ALL_REQUIREMENTS), 3), dtype=np.int64)
    compliant = LabelState.COMPLIANT
    noncompliant = LabelState.NON_COMPLIANT
    for key, n in occurrences.items():
        record = exemplars[key]
        generated = record.quality_tier is QualityTier.GEN
        if generated:
            reqs: Iterable[Requirement] = record.restricted_to or ()
        else:
            reqs = record.labels
        for req in reqs:
            label = record.labels.get(req)
            if label is None:
                continue
            if label.state is compliant:
                counts[req.value - 1, 0] += n
            elif label.state is noncompliant:
                counts[req.value - 1, 2 if generated else 1] += n

    table = {
        req: RequirementCounts(
            n_compliant=int(counts[req.value - 1, 0]),
            n_noncompliant=int(counts[req.value - 1, 1]),
            n_generated_noncompliant=int(counts[req.value - 1, 2]),
        )
        for req in ALL_REQUIREMENTS
    }
    return ComplianceDistribution(per_requirement=table)


# ---------------------------------------------------------------------------
# Loss-weight derivation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskSummary:
    """Aggregated positive/negative pixel counts per mask region over a
    training set."""

    positive_pixels: np.ndarray  # shape (8,)
    negative_pixels: np.ndarray  # shape (8,)

    def __post_init__(self):
        pos = np.asarray(self.positive_pixels, dtype=np.int64)
        neg = np.asarray(self.negative_pixels, dtype=np.int64)
        if pos.shape != (N_MASK_REGIONS,) or neg.shape != (N_MASK_REGIONS,):
            raise DataError("mask summary arrays must have shape (8,)")
        object.__setattr__(self, "positive_pixels", pos)
        object.__setattr__(self, "negative_pixels", neg)


@dataclass(frozen=True)
class WeightSet:
    """Loss weights: per-requirement positive weights and balance factors,
    plus per-mask positive weights.

    ``lambda_r_exact`` keeps the compliant/non-compliant ratios as exact
    rationals so that lambda_r * n_noncompliant == n_compliant holds
    without float round-off.
    """

    lambda_r: np.ndarray  # (26,) positive weight per requirement
    beta_r: np.ndarray  # (26,) cross-requirement balance, sums to 26
    lambda_m: np.ndarray  # (8,) positive weight per mask region
    lambda_r_exact: tuple[Fraction, ...] = ()

    def __post_init__(self):
        for name in ("lambda_r", "beta_r", "lambda_m"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise DataError(f"{name} entries must be finite and > 0")
            object.__setattr__(self, name, arr)


def beta_factors(sample_counts) -> np.ndarray:
    """Cross-requirement balance factors: proportional to the inverse of
    each requirement's gated-in sample count, normalized to sum to the
    number of requirements (so uniform counts give all ones)."""
    v = np.asarray(sample_counts, dtype=np.float64)
    if np.any(v <= 0):
        raise DataError("beta_factors: sample counts must be positive")
    inv = 1.0 / v
    return v.size * inv / inv.sum()


def derive_weights(
    records: Sequence[ImageRecord],
    masks_summary: MaskSummary,
    rules: Optional[Sequence[ConflictRule]] = None,
) -> WeightSet:
    """Derive the training weights from gated-in label counts.

    lambda_r is the compliant/non-compliant ratio per requirement, beta_r
    redistributes weight inversely to the number of gated-in samples
    (normalized to sum to R), and lambda_m is the negative/positive pixel
    ratio per mask region.
    """
    if not records:
        raise DataError("derive_weights: empty record sequence")
    rules = default_conflict_rules() if rules is None else list(rules)

    occurrences: dict[tuple, int] = {}
    exemplars: dict[tuple, ImageRecord] = {}
    for record in records:
        key = (id(record.labels), record.restricted_to)
        occurrences[key] = occurrences.get(key, 0) + 1
        exemplars.setdefault(key, record)

    n_req = len(ALL_REQUIREMENTS)
    n_compliant = np.zeros(n_req, dtype=np.int64)
    n_noncompliant = np.zeros(n_req, dtype=np.int64)
    for key, n in occurrences.items():
        record = exemplars[key]
        gates = gate(record.labels, rules, restricted_to=record.restricted_to)
        for req in ALL_REQUIREMENTS:
            idx = req.value - 1
            if gates.gates[idx] == 0:
                continue
            state = record.labels[req].state
            if state is LabelState.COMPLIANT:
                n_compliant[idx] += n
            elif state is LabelState.NON_COMPLIANT:
                n_noncompliant[idx] += n

    for req in ALL_REQUIREMENTS:
        idx = req.value - 1
        if n_compliant[idx] == 0 or n_noncompliant[idx] == 0:
            raise DataError(
                f"degenerate class counts for {req.short_name}: "
                f"{int(n_compliant[idx])} compliant / "
                f"{int(n_noncompliant[idx])} non-compliant gated-in samples"
            )

    lambda_exact = tuple(
        Fraction(int(c), int(nc)) for c, nc in zip(n_compliant, n_noncompliant)
    )
    lambda_r = np.array([float(f) for f in lambda_exact])
    beta_r = beta_factors(n_compliant + n_noncompliant)

    pos = masks_summary.positive_pixels.astype(np.float64)
    neg = masks_summary.negative_pixels.astype(np.float64)
    for m in range(N_MASK_REGIONS):
        if pos[m] <= 0:
            raise DataError(f"degenerate mask region {m + 1}: no positive pixels")
    lambda_m = neg / pos

    return WeightSet(
        lambda_r=lambda_r,
        beta_r=beta_r,
        lambda_m=lambda_m,
        lambda_r_exact=lambda_exact,
    )


# ---------------------------------------------------------------------------
# Balanced subset selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellReport:
    gender: Gender
    origin: Origin
    age_group: AgeGroup
    target: int
    achieved: int


@dataclass(frozen=True)
class BalanceReport:
    cells: tuple[CellReport, ...]

    @property
    def shortfalls(self) -> tuple[CellReport, ...]:
        return tuple(c for c in self.cells if c.achieved < c.target)


def select_balanced_subset(
    records: Sequence[ImageRecord],
    target_fraction_per_cell: float,
    seed: int,
) -> tuple[list[ImageRecord], BalanceReport]:
    """Greedy per-cell subject sampling over the gender x origin x age grid.

    Each of the 30 cells gets the same subject target,
    round(target_fraction_per_cell * n_pool_subjects); all of a subject's
    images move together. Deterministic given the seed. Shortfalls are
    reported, never fatal.
    """
    if not (0.0 < target_fraction_per_cell <= 1.0):
        raise DataError(
            f"target_fraction_per_cell must be in (0,1]: {target_fraction_per_cell}"
        )

    by_subject: dict[str, list[ImageRecord]] = {}
    subject_cell: dict[str, tuple[Gender, Origin, AgeGroup]] = {}
    for r in records:
        by_subject.setdefault(r.subject_id, []).append(r)
        subject_cell.setdefault(r.subject_id, r.demographics.cell())

    n_pool = len(by_subject)
    target = int(round(target_fraction_per_cell * n_pool))

    cell_subjects: dict[tuple, list[str]] = {}
    for subject_id in sorted(by_subject):
        cell_subjects.setdefault(subject_cell[subject_id], []).append(subject_id)

    rng = np.random.default_rng(seed)
    selected: set[str] = set()
    cells: list[CellReport] = []
    for gender in Gender:
        for origin in Origin:
            for age in AgeGroup:
                pool = cell_subjects.get((gender, origin, age), [])
                order = rng.permutation(len(pool))
                take = [pool[i] for i in order[: min(target, len(pool))]]
                selected.update(take)
                cells.append(
                    CellReport(
                        gender=gender,
                        origin=origin,
                        age_group=age,
                        target=target,
                        achieved=len(take),
                    )
                )

    subset = [r for r in records if r.subject_id in selected]
    return subset, BalanceReport(cells=tuple(cells))


# ---------------------------------------------------------------------------
# Table emission (delimited text)
# ---------------------------------------------------------------------------


def format_distribution_table(table: DistributionTable) -> str:
    lines = ["category\tgroup\tcount\tpct"]
    for tier, n in table.n_images_per_tier.items():
        lines.append(f"images\t{tier.value}\t{n}\t")
    lines.append(f"subjects\tall\t{table.n_subjects}\t")
    for cat, counts, pcts in (
        ("gender", table.gender_counts, table.gender_pct),
        ("origin", table.origin_counts, table.origin_pct),
        ("age", table.age_counts, table.age_pct),
    ):
        for group, n in counts.items():
            lines.append(f"{cat}\t{group.value}\t{n}\t{pcts[group]:.1f}")
    return "\n".join(lines) + "\n"


def format_compliance_table(dist: ComplianceDistribution) -> str:
    lines = ["requirement\tindex\tcompliant\tnoncompliant\tgenerated_noncompliant\tpct_noncompliant"]
    for req in ALL_REQUIREMENTS:
        c = dist.per_requirement[req]
        lines.append(
            f"{req.short_name}\t{req.value}\t{c.n_compliant}\t{c.n_noncompliant}"
            f"\t{c.n_generated_noncompliant}\t{c.pct_noncompliant:.2f}"
        )
    return "\n".join(lines) + "\n"
