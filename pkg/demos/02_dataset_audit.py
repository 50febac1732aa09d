"""Audit a manifest: demographic distribution, compliance balance, the
derived loss weights, and a demographically balanced subset.

Uses a synthetic manifest so the demo is self-contained; point
`load_manifest` at your own file for real audits (or use the CLI:
`portraitcheck audit-dataset my.manifest`).
"""
import numpy as np

from portraitcheck import (
    Requirement,
    compliance_distribution,
    compliant_labels,
    derive_weights,
    distribution_stats,
    non_compliant,
    select_balanced_subset,
)
from portraitcheck.manifest import MaskSummary, format_compliance_table, format_distribution_table
from portraitcheck.types import (
    AgeGroup,
    DemographicProfile,
    Gender,
    ImageRecord,
    Origin,
    QualityTier,
)

rng = np.random.default_rng(0)
registry_reasons = {
    req: sorted(__import__("portraitcheck").default_reason_registry().reasons[req])[0]
    for req in Requirement
}

# A skewed pool: mostly caucasian male young adults, everything else thin.
records = []
sid = 0
for gender in Gender:
    for origin in Origin:
        for age in AgeGroup:
            boost = 4 if (gender is Gender.MALE and origin is Origin.CAUCASIAN) else 1
            for _ in range(3 * boost):
                labels = compliant_labels()
                # sprinkle some non-compliances so every requirement has both classes
                for req in Requirement:
                    if rng.uniform() < 0.12:
                        labels[req] = non_compliant(registry_reasons[req])
                records.append(
                    ImageRecord(
                        image_id=f"img{sid:04d}",
                        subject_id=f"subj{sid:04d}",
                        quality_tier=QualityTier.HQ,
                        source_path=f"images/img{sid:04d}.png",
                        demographics=DemographicProfile(gender, age, origin),
                        labels=labels,
                    )
                )
                sid += 1

print("== demographic distribution (per subject) ==")
print(format_distribution_table(distribution_stats(records)))

print("== compliance distribution (first 6 requirements) ==")
table = format_compliance_table(compliance_distribution(records))
print("\n".join(table.splitlines()[:7]), "\n...")

# Loss weights need mask statistics too; pretend the regions cover ~10%.
masks = MaskSummary(np.full(8, 1000, dtype=np.int64), np.full(8, 9000, dtype=np.int64))
weights = derive_weights(records, masks)
print("\n== derived weights ==")
print("lambda_r[:5] :", np.round(weights.lambda_r[:5], 3))
print("beta_r[:5]   :", np.round(weights.beta_r[:5], 3), f"(sum {weights.beta_r.sum():.1f})")
print("lambda_m     :", np.round(weights.lambda_m, 2))

# Balance the pool: same subject target in each of the 30 demographic cells.
n_pool = len({r.subject_id for r in records})
subset, report = select_balanced_subset(records, 3 / n_pool, seed=7)
achieved = distribution_stats(subset)
print(f"\n== balanced subset: {len(subset)} of {len(records)} records ==")
print("gender pct:", {g.value: round(p, 1) for g, p in achieved.gender_pct.items()})
print("origin pct:", {o.value: round(p, 1) for o, p in achieved.origin_pct.items()})
shortfalls = report.shortfalls
print("cell shortfalls:", len(shortfalls))
