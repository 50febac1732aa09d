"""Walk through the requirement catalog and the label model.

The library checks portraits against 26 conditions. Each gets a
tri-state label: compliant, no way to confirm, or non-compliant with a
reason drawn from a versioned registry.
"""
from portraitcheck import (
    ALL_REQUIREMENTS,
    Requirement,
    compliant_labels,
    default_reason_registry,
    non_compliant,
    validate_record,
)
from portraitcheck.types import (
    DemographicProfile,
    Gender,
    AgeGroup,
    Origin,
    ImageRecord,
    QualityTier,
)

print("The 26 requirements (24-26 are the extended set):\n")
for req in ALL_REQUIREMENTS:
    marker = " *" if req.extended else ""
    print(f"  {req.value:>2}  {req.short_name}{marker}")

registry = default_reason_registry()
print(f"\nReason registry v{registry.version}; example vocabularies:")
for req in (Requirement.HEAD_COVERINGS, Requirement.SHADOWS_ACROSS_FACE, Requirement.BLURRED):
    print(f"  {req.short_name}: {sorted(registry.reasons[req])}")

# Build a record and watch the validator catch problems.
labels = compliant_labels()
labels[Requirement.HEAD_COVERINGS] = non_compliant("hat")
record = ImageRecord(
    image_id="demo001",
    subject_id="subj42",
    quality_tier=QualityTier.HQ,
    source_path="images/demo001.png",
    demographics=DemographicProfile(Gender.FEMALE, AgeGroup.A21_35, Origin.ASIAN),
    labels=labels,
)
print("\nvalid record ->", validate_record(record) or "ok")

bad_labels = dict(labels)
bad_labels[Requirement.BLURRED] = non_compliant("too_wobbly")  # not in the registry
bad = ImageRecord(
    image_id="demo002",
    subject_id="subj42",
    quality_tier=QualityTier.GEN,  # gen tier without provenance
    source_path="images/demo002.png",
    demographics=record.demographics,
    labels=bad_labels,
)
print("broken record ->")
for violation in validate_record(bad):
    print("   ", violation)
