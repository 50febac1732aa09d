"""portraitcheck: ICAO/ISO portrait compliance toolkit.

Library surface:

- :mod:`portraitcheck.types` -- the 26 requirements, labels, records
- :mod:`portraitcheck.manifest` -- dataset ingestion, audits, weights,
  balanced subsets
- :mod:`portraitcheck.degrade` -- synthetic non-compliance generation
- :mod:`portraitcheck.masks` -- face-region mask stacks and sidecars
- :mod:`portraitcheck.gating` / :mod:`portraitcheck.losses` -- validity
  gates and the two training objectives
- :mod:`portraitcheck.model` -- the dual-branch attention classifier
- :mod:`portraitcheck.training` / :mod:`portraitcheck.checkpoint` --
  the optimization loop and its checkpoint container
- :mod:`portraitcheck.metrics` -- EER, group deltas, Bias Index
- :mod:`portraitcheck.gaze` -- landmark-based gaze refinement

Torch-backed modules (model, losses, training, checkpoint) are imported
lazily; dataset and metrics work does not pull in torch.
"""
from .types import (
    ALL_REQUIREMENTS,
    AgeGroup,
    ComplianceLabel,
    ConfigError,
    DataError,
    Decision,
    DemographicProfile,
    GateVector,
    Gender,
    ImageRecord,
    LabelState,
    MASK_REGIONS,
    N_MASK_REGIONS,
    N_REQUIREMENTS,
    Origin,
    Partition,
    PortraitCheckError,
    QualityTier,
    ReasonRegistry,
    Requirement,
    ScoreVector,
    compliant_labels,
    default_reason_registry,
    non_compliant,
    parse_record_line,
    serialize_record,
    validate_record,
)
from .gating import ConflictRule, default_conflict_rules, gate
from .manifest import (
    ComplianceDistribution,
    DistributionTable,
    MaskSummary,
    WeightSet,
    compliance_distribution,
    derive_weights,
    distribution_stats,
    load_manifest,
    save_manifest,
    select_balanced_subset,
)
from .masks import MaskSet, load_mask_set, save_mask_set, summarize_masks
from .metrics import (
    Category,
    EerResult,
    EvalReport,
    ScoredSample,
    bias_index,
    build_report,
    eer,
    eer_from_scores,
    emit_report,
    group_eers,
    parse_report,
)
from .gaze import (
    Eye,
    EyeLandmarks,
    SidecarLandmarks,
    gaze_deviation,
    refine_looking_away,
)

__version__ = "0.1.0"
