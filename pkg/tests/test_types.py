import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portraitcheck.types import (
    ALL_REQUIREMENTS,
    AgeGroup,
    ComplianceLabel,
    DataError,
    DemographicProfile,
    GateVector,
    Gender,
    LabelState,
    Origin,
    Partition,
    QualityTier,
    Requirement,
    ScoreVector,
    compliant_labels,
    default_reason_registry,
    non_compliant,
    parse_record_line,
    record_from_dict,
    record_to_dict,
    serialize_record,
    validate_record,
)

from conftest import make_record


class TestRequirement:
    def test_exactly_26_members(self):
        assert len(ALL_REQUIREMENTS) == 26
        assert len(set(ALL_REQUIREMENTS)) == 26

    def test_index_bijection(self):
        # both directions, full enumeration
        for i in range(1, 27):
            req = Requirement.from_index(i)
            assert req.value == i
        for req in ALL_REQUIREMENTS:
            assert Requirement.from_index(req.value) is req
            assert Requirement.from_short_name(req.short_name) is req

    def test_extended_flag_is_exactly_24_to_26(self):
        extended = {r.value for r in ALL_REQUIREMENTS if r.extended}
        assert extended == {24, 25, 26}

    def test_index_out_of_range(self):
        with pytest.raises(DataError):
            Requirement.from_index(0)
        with pytest.raises(DataError):
            Requirement.from_index(27)

    def test_unknown_short_name(self):
        with pytest.raises(DataError, match="unknown requirement"):
            Requirement.from_short_name("nose_too_big")


class TestValidateRecord:
    def test_fully_populated_record_ok(self):
        assert validate_record(make_record("img1")) == []

    def test_missing_requirement_26(self):
        labels = compliant_labels()
        del labels[Requirement.POSTERIZATION]
        violations = validate_record(make_record("img1", labels=labels))
        assert violations == ["missing label: posterization"]

    def test_gen_without_provenance_exactly_one_violation(self):
        record = make_record("img1", tier=QualityTier.GEN)
        violations = validate_record(record)
        assert len(violations) == 1
        assert "provenance" in violations[0]

    def test_gen_with_provenance_ok(self):
        record = make_record(
            "img1",
            tier=QualityTier.GEN,
            generated_from="img0",
            restricted_to=(Requirement.BLURRED,),
        )
        assert validate_record(record) == []

    def test_reason_on_compliant_label_is_violation(self):
        labels = compliant_labels()
        labels[Requirement.EYES_CLOSED] = ComplianceLabel(
            LabelState.COMPLIANT, reason="both_eyes_closed"
        )
        violations = validate_record(make_record("img1", labels=labels))
        assert any("reason present" in v for v in violations)

    def test_noncompliant_without_reason_is_violation(self):
        labels = compliant_labels()
        labels[Requirement.EYES_CLOSED] = ComplianceLabel(LabelState.NON_COMPLIANT)
        violations = validate_record(make_record("img1", labels=labels))
        assert any("missing reason" in v for v in violations)

    def test_unknown_reason_strict_vs_lenient(self):
        labels = compliant_labels()
        labels[Requirement.EYES_CLOSED] = non_compliant("eyelids_missing")
        record = make_record("img1", labels=labels)
        assert any("unknown reason" in v for v in validate_record(record))
        assert validate_record(record, lenient=True) == []

    def test_restricted_to_on_natural_record(self):
        record = make_record("img1", restricted_to=(Requirement.BLURRED,))
        assert any("restricted_to" in v for v in validate_record(record))


class TestReasonRegistry:
    def test_covers_all_requirements(self):
        reg = default_reason_registry()
        assert set(reg.reasons) == set(ALL_REQUIREMENTS)

    def test_generated_reasons_present_for_synthesizable_requirements(self):
        reg = default_reason_registry()
        assert reg.allows(Requirement.POSTERIZATION, "generated:posterization")
        assert reg.allows(Requirement.BLURRED, "generated:gaussian_blur")
        assert not reg.allows(Requirement.EYES_CLOSED, "generated:posterization")


class TestVectors:
    def test_score_vector_bounds(self):
        ScoreVector(np.linspace(0, 1, 26))
        with pytest.raises(DataError):
            ScoreVector(np.full(26, 1.5))
        with pytest.raises(DataError):
            ScoreVector(np.full(25, 0.5))
        bad = np.full(26, 0.5)
        bad[3] = np.nan
        with pytest.raises(DataError):
            ScoreVector(bad)

    def test_gate_vector_binary(self):
        GateVector(np.ones(26))
        with pytest.raises(DataError):
            GateVector(np.full(26, 0.5))

    def test_vectors_are_frozen(self):
        sv = ScoreVector(np.full(26, 0.5))
        with pytest.raises(ValueError):
            sv.scores[0] = 0.1


class TestSerialization:
    def test_parse_rejects_extra_gender(self):
        d = record_to_dict(make_record("img1"))
        d["demographics"]["gender"] = "nonbinary"
        with pytest.raises(DataError, match="gender.*male.*female"):
            record_from_dict(d)

    def test_parse_rejects_bad_age_group(self):
        d = record_to_dict(make_record("img1"))
        d["demographics"]["age_group"] = "18-25"
        with pytest.raises(DataError, match="age_group"):
            record_from_dict(d)

    def test_missing_field_named(self):
        d = record_to_dict(make_record("img1"))
        del d["subject_id"]
        with pytest.raises(DataError, match="subject_id"):
            record_from_dict(d)

    def test_round_trip_normalized(self):
        record = make_record("img1")
        line = serialize_record(record)
        again = serialize_record(parse_record_line(line))
        assert json.loads(line) == json.loads(again)
        assert line == again  # canonical serialization is stable


# hypothesis strategy over full records
_reasons = default_reason_registry()


@st.composite
def record_strategy(draw):
    labels = {}
    for req in ALL_REQUIREMENTS:
        state = draw(st.sampled_from(list(LabelState)))
        if state is LabelState.NON_COMPLIANT:
            labels[req] = non_compliant(
                draw(st.sampled_from(sorted(_reasons.reasons[req]))),
                severity=draw(st.sampled_from([None, "mild", "strong"])),
            )
        else:
            labels[req] = ComplianceLabel(state)
    return make_record(
        draw(st.text(st.characters(categories=["L", "N"]), min_size=1, max_size=12)),
        gender=draw(st.sampled_from(list(Gender))),
        origin=draw(st.sampled_from(list(Origin))),
        age=draw(st.sampled_from(list(AgeGroup))),
        labels=labels,
        partition=draw(st.sampled_from(list(Partition))),
    )


@settings(max_examples=60, deadline=None)
@given(record_strategy())
def test_round_trip_property(record):
    line = serialize_record(record)
    parsed = parse_record_line(line)
    assert parsed == record
    assert json.loads(serialize_record(parsed)) == json.loads(line)
