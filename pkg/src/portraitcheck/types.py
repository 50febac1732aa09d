"""Core value types shared by every other module.

The 26 portrait requirements, tri-state compliance labels, demographic
profiles, per-image records, and the score/gate vectors produced and
consumed by the classifier. All types are immutable value objects and can
be shared freely between concurrent workers.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Optional

import numpy as np

N_REQUIREMENTS = 26

# Fixed order of the 8 face-region masks used for segmentation supervision
# and spatial attention.
MASK_REGIONS: tuple[str, ...] = (
    "head_coverings",
    "hair",
    "eyeglasses",
    "eyes",
    "mouth",
    "full_face",
    "torso",
    "background",
)
N_MASK_REGIONS = len(MASK_REGIONS)


class PortraitCheckError(Exception):
    """Base class for all library errors."""


class DataError(PortraitCheckError):
    """Malformed or inconsistent input data (manifests, labels, sidecars)."""


class ConfigError(PortraitCheckError):
    """Invalid configuration or arguments."""


class Requirement(enum.IntEnum):
    """One of the 26 testable portrait-quality conditions.

    Indices 1-23 are the classic scene requirements; 24-26 are the
    extended set (``extended`` is True for those members).
    """

    EYES_CLOSED = 1
    NON_NEUTRAL_EXPRESSION = 2
    MOUTH_OPEN = 3
    ROTATED_SHOULDERS = 4
    ROLL_PITCH_YAW = 5
    LOOKING_AWAY = 6
    HAIR_ACROSS_EYES = 7
    HEAD_COVERINGS = 8
    VEIL_OVER_FACE = 9
    OTHER_FACES_OR_OBJECTS = 10
    DARK_TINTED_LENSES = 11
    FRAME_COVERING_EYES = 12
    FLASH_REFLECTION_ON_LENSES = 13
    FRAMES_TOO_HEAVY = 14
    SHADOWS_BEHIND_HEAD = 15
    SHADOWS_ACROSS_FACE = 16
    FLASH_REFLECTION_ON_SKIN = 17
    UNNATURAL_SKIN_TONE = 18
    RED_EYES = 19
    TOO_DARK_LIGHT = 20
    BLURRED = 21
    VARIED_BACKGROUND = 22
    PIXELATION = 23
    WASHED_OUT = 24
    INK_MARKED_CREASED = 25
    POSTERIZATION = 26

    @property
    def short_name(self) -> str:
        return self.name.lower()

    @property
    def extended(self) -> bool:
        return self.value > 23

    @classmethod
    def from_short_name(cls, name: str) -> "Requirement":
        try:
            return cls[name.upper()]
        except KeyError:
            raise DataError(f"unknown requirement short name: {name!r}") from None

    @classmethod
    def from_index(cls, index: int) -> "Requirement":
        if not 1 <= index <= N_REQUIREMENTS:
            raise DataError(f"requirement index out of range [1,26]: {index}")
        return cls(index)


ALL_REQUIREMENTS: tuple[Requirement, ...] = tuple(Requirement)


class LabelState(enum.Enum):
    COMPLIANT = "compliant"
    NO_WAY_TO_CONFIRM = "no_way_to_confirm"
    NON_COMPLIANT = "non_compliant"


class Gender(enum.Enum):
    MALE = "male"
    FEMALE = "female"


class AgeGroup(enum.Enum):
    """Age bands: [0-20], [21-35], [36-50], [51-65], [66+]."""

    A0_20 = "0-20"
    A21_35 = "21-35"
    A36_50 = "36-50"
    A51_65 = "51-65"
    A66_PLUS = "66+"


class Origin(enum.Enum):
    ASIAN = "asian"
    CAUCASIAN = "caucasian"
    AFRICAN = "african"


class QualityTier(enum.Enum):
    HQ = "hq"
    SQ = "sq"
    GEN = "gen"


class Partition(enum.Enum):
    ALL = "all"
    TRAIN = "train"
    TRAIN_BALANCED = "train_balanced"
    TEST = "test"


class Decision(enum.Enum):
    COMPLIANT = "compliant"
    NON_COMPLIANT = "non_compliant"


@dataclass(frozen=True)
class ComplianceLabel:
    """Tri-state compliance annotation for one requirement.

    ``reason`` is present iff the state is NON_COMPLIANT and must belong to
    the per-requirement vocabulary of the reason registry (unless validated
    leniently). ``severity`` is an optional free token.
    """

    state: LabelState
    reason: Optional[str] = None
    severity: Optional[str] = None


COMPLIANT = ComplianceLabel(LabelState.COMPLIANT)
NO_WAY_TO_CONFIRM = ComplianceLabel(LabelState.NO_WAY_TO_CONFIRM)


def non_compliant(reason: str, severity: Optional[str] = None) -> ComplianceLabel:
    return ComplianceLabel(LabelState.NON_COMPLIANT, reason=reason, severity=severity)


@dataclass(frozen=True)
class DemographicProfile:
    gender: Gender
    age_group: AgeGroup
    origin: Origin
    country: Optional[str] = None

    def cell(self) -> tuple[Gender, Origin, AgeGroup]:
        """The (gender, origin, age_group) grid cell used for balancing."""
        return (self.gender, self.origin, self.age_group)


@dataclass(frozen=True)
class ImageRecord:
    """One portrait with identity, demographics, and all 26 labels.

    Records hold only the path to the pixels, never pixel data. Label maps
    must carry every requirement key. Generated (Gen tier) records carry
    provenance via ``generated_from`` and are restricted to the
    requirements listed in ``restricted_to``.
    """

    image_id: str
    subject_id: str
    quality_tier: QualityTier
    source_path: str
    demographics: DemographicProfile
    labels: Mapping[Requirement, ComplianceLabel]
    attributes: Mapping[str, str] = field(default_factory=dict)
    partition: Partition = Partition.ALL
    generated_from: Optional[str] = None
    restricted_to: Optional[tuple[Requirement, ...]] = None


# ---------------------------------------------------------------------------
# Reason registry
# ---------------------------------------------------------------------------

_REGISTRY_CACHE: Optional["ReasonRegistry"] = None


@dataclass(frozen=True)
class ReasonRegistry:
    """Versioned closed vocabulary of non-compliance reasons per requirement."""

    version: str
    reasons: Mapping[Requirement, frozenset[str]]

    def allows(self, requirement: Requirement, reason: str) -> bool:
        return reason in self.reasons.get(requirement, frozenset())

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ReasonRegistry":
        reasons = {
            Requirement.from_short_name(name): frozenset(tokens)
            for name, tokens in raw["reasons"].items()
        }
        missing = [r.short_name for r in ALL_REQUIREMENTS if r not in reasons]
        if missing:
            raise ConfigError(f"reason registry missing requirements: {missing}")
        return cls(version=str(raw["version"]), reasons=reasons)

    @classmethod
    def load(cls, path: Optional[str] = None) -> "ReasonRegistry":
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        raw = json.loads(
            resources.files("portraitcheck.data")
            .joinpath("reason_registry.json")
            .read_text(encoding="utf-8")
        )
        return cls.from_dict(raw)


def default_reason_registry() -> ReasonRegistry:
    global _REGISTRY_CACHE
    if _REGISTRY_CACHE is None:
        _REGISTRY_CACHE = ReasonRegistry.load()
    return _REGISTRY_CACHE


# ---------------------------------------------------------------------------
# Score and gate vectors
# ---------------------------------------------------------------------------


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ScoreVector:
    """26 predicted probabilities of NON-compliance, index-aligned with Requirement."""

    scores: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.scores, np.float64)
        if arr.shape != (N_REQUIREMENTS,):
            raise DataError(f"score vector must have shape (26,), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("score vector contains non-finite entries")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("score vector entries must lie in [0,1]")
        object.__setattr__(self, "scores", arr)

    def __getitem__(self, requirement: Requirement) -> float:
        return float(self.scores[requirement.value - 1])


@dataclass(frozen=True)
class GateVector:
    """26 binary validity flags; 0 means the requirement is excluded from
    loss and evaluation for this sample."""

    gates: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.gates)
        if raw.shape != (N_REQUIREMENTS,):
            raise DataError(f"gate vector must have shape (26,), got {raw.shape}")
        if not np.all((raw == 0) | (raw == 1)):
            raise DataError("gate vector entries must be 0 or 1")
        object.__setattr__(self, "gates", _frozen_array(raw, np.int8))

    def __getitem__(self, requirement: Requirement) -> int:
        return int(self.gates[requirement.value - 1])


# ---------------------------------------------------------------------------
# Record validation
# ---------------------------------------------------------------------------


def validate_record(
    record: ImageRecord,
    registry: Optional[ReasonRegistry] = None,
    lenient: bool = False,
) -> list[str]:
    """Check a record against the type invariants.

    Returns the list of violations (empty when the record is valid);
    violations are data, not faults, so nothing is raised here. With
    ``lenient`` set, unknown non-compliance reasons are tolerated.
    """
    registry = registry or default_reason_registry()
    violations: list[str] = []

    for req in ALL_REQUIREMENTS:
        label = record.labels.get(req)
        if label is None:
            violations.append(f"missing label: {req.short_name}")
            continue
        if label.state is LabelState.NON_COMPLIANT:
            if label.reason is None:
                violations.append(f"missing reason for non_compliant: {req.short_name}")
            elif not lenient and not registry.allows(req, label.reason):
                violations.append(
                    f"unknown reason {label.reason!r} for {req.short_name} "
                    f"(registry v{registry.version})"
                )
        elif label.reason is not None:
            violations.append(
                f"reason present on {label.state.value} label: {req.short_name}"
            )

    extra = set(record.labels) - set(ALL_REQUIREMENTS)
    if extra:
        names = sorted(getattr(k, "short_name", repr(k)) for k in extra)
        violations.append(f"unknown label keys: {names}")

    if record.quality_tier is QualityTier.GEN and not record.generated_from:
        violations.append("missing provenance: Gen-tier record without generated_from")
    if record.quality_tier is not QualityTier.GEN and record.restricted_to:
        violations.append("restricted_to set on a non-generated record")

    if not record.image_id:
        violations.append("empty image_id")
    if not record.subject_id:
        violations.append("empty subject_id")

    return violations


# ---------------------------------------------------------------------------
# Serialization (one record per manifest line)
# ---------------------------------------------------------------------------


def record_to_dict(record: ImageRecord) -> dict:
    """Canonical JSON-compatible form with a stable key order."""
    d: dict = {
        "image_id": record.image_id,
        "subject_id": record.subject_id,
        "quality_tier": record.quality_tier.value,
        "source_path": record.source_path,
        "partition": record.partition.value,
        "demographics": {
            "gender": record.demographics.gender.value,
            "age_group": record.demographics.age_group.value,
            "origin": record.demographics.origin.value,
        },
        "labels": {},
        "attributes": dict(sorted(record.attributes.items())),
    }
    if record.demographics.country is not None:
        d["demographics"]["country"] = record.demographics.country
    for req in ALL_REQUIREMENTS:
        label = record.labels.get(req)
        if label is None:
            continue
        entry: dict = {"state": label.state.value}
        if label.reason is not None:
            entry["reason"] = label.reason
        if label.severity is not None:
            entry["severity"] = label.severity
        d["labels"][req.short_name] = entry
    if record.generated_from is not None:
        d["generated_from"] = record.generated_from
    if record.restricted_to is not None:
        d["restricted_to"] = [r.short_name for r in record.restricted_to]
    return d


def _parse_enum(enum_cls, token, field_name: str):
    try:
        return enum_cls(token)
    except ValueError:
        allowed = [e.value for e in enum_cls]
        raise DataError(
            f"invalid {field_name}: {token!r} (allowed: {allowed})"
        ) from None


def record_from_dict(d: Mapping) -> ImageRecord:
    """Parse one manifest record; raises DataError naming the bad field."""
    try:
        image_id = str(d["image_id"])
        subject_id = str(d["subject_id"])
        source_path = str(d["source_path"])
        demo_raw = d["demographics"]
        labels_raw = d["labels"]
    except KeyError as exc:
        raise DataError(f"missing field: {exc.args[0]}") from None

    gender = _parse_enum(Gender, demo_raw.get("gender"), "gender")
    age_group = _parse_enum(AgeGroup, demo_raw.get("age_group"), "age_group")
    origin = _parse_enum(Origin, demo_raw.get("origin"), "origin")
    demographics = DemographicProfile(
        gender=gender,
        age_group=age_group,
        origin=origin,
        country=demo_raw.get("country"),
    )

    labels: dict[Requirement, ComplianceLabel] = {}
    for name, entry in labels_raw.items():
        req = Requirement.from_short_name(name)
        state = _parse_enum(LabelState, entry.get("state"), f"labels.{name}.state")
        labels[req] = ComplianceLabel(
            state=state,
            reason=entry.get("reason"),
            severity=entry.get("severity"),
        )

    restricted = d.get("restricted_to")
    restricted_to = (
        tuple(Requirement.from_short_name(n) for n in restricted)
        if restricted is not None
        else None
    )

    return ImageRecord(
        image_id=image_id,
        subject_id=subject_id,
        quality_tier=_parse_enum(QualityTier, d.get("quality_tier"), "quality_tier"),
        source_path=source_path,
        demographics=demographics,
        labels=labels,
        attributes={str(k): str(v) for k, v in d.get("attributes", {}).items()},
        partition=_parse_enum(Partition, d.get("partition", "all"), "partition"),
        generated_from=d.get("generated_from"),
        restricted_to=restricted_to,
    )


def serialize_record(record: ImageRecord) -> str:
    return json.dumps(record_to_dict(record), separators=(",", ":"), ensure_ascii=False)


def parse_record_line(line: str) -> ImageRecord:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise DataError("manifest line is not an object")
    return record_from_dict(raw)


def compliant_labels() -> dict[Requirement, ComplianceLabel]:
    """A fresh all-Compliant label map covering every requirement."""
    return {req: COMPLIANT for req in ALL_REQUIREMENTS}
