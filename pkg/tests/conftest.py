import sys
from pathlib import Path

import pytest

from portraitcheck.types import (
    AgeGroup,
    DemographicProfile,
    Gender,
    ImageRecord,
    Origin,
    Partition,
    QualityTier,
    compliant_labels,
)

sys.path.insert(0, str(Path(__file__).parent))


def make_record(
    image_id: str,
    subject_id: str = None,
    gender: Gender = Gender.MALE,
    origin: Origin = Origin.CAUCASIAN,
    age: AgeGroup = AgeGroup.A21_35,
    labels=None,
    tier: QualityTier = QualityTier.HQ,
    partition: Partition = Partition.ALL,
    **kwargs,
) -> ImageRecord:
    return ImageRecord(
        image_id=image_id,
        subject_id=subject_id or f"subj_{image_id}",
        quality_tier=tier,
        source_path=f"images/{image_id}.png",
        demographics=DemographicProfile(gender=gender, age_group=age, origin=origin),
        labels=labels if labels is not None else compliant_labels(),
        partition=partition,
        **kwargs,
    )


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """A 20-image toy manifest (4 bases x 4 effects), built once."""
    from portraitcheck.toydata import build_toy_dataset

    root = tmp_path_factory.mktemp("toy")
    return build_toy_dataset(root, n_bases=4, seed=11)
