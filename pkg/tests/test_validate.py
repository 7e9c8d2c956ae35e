import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialfuse.ontology import default_ontology_dir, load_ontology
from trialfuse.schema import parse_record
from trialfuse.validate import (ACCEPT, ACCEPT_REPAIRED, REJECT, SynonymTable,
                                ValidatorConfig, check_conformance,
                                check_cross_field,
                                normalize_units_and_spelling, validate_record)


@pytest.fixture(scope="module")
def ontology():
    return load_ontology(default_ontology_dir())


@pytest.fixture(scope="module")
def synonyms():
    return SynonymTable.bundled()


def make_record(**overrides):
    row = {
        "nct_id": "NCT00000001",
        "phase": "PHASE1, PHASE2",
        "diseases": ["Irritable Bowel Syndrome"],
        "drugs": ["saccharomyces cerevisiae"],
        "icdcode": ["D6861"],
        "criteria": ("Inclusion Criteria:\n* adults between 18 and 75 years.\n"
                     "Exclusion Criteria:\n* pregnancy."),
        "enrollment": 120,
        "arms": 2,
        "comparator": "placebo",
        "primary_endpoint": "symptom score at week 8",
    }
    row.update(overrides)
    return parse_record(row)


def statuses(results):
    return {r.rule_id: r.status for r in results}


def test_consistent_record_all_pass():
    assert set(statuses(check_conformance(make_record())).values()) == {"pass"}


def test_arm_comparator_disagreement():
    record = make_record(arms=1)
    assert statuses(check_conformance(record))["arm_comparator_agreement"] == "fail"


def test_enrollment_non_integer():
    record = make_record(enrollment="many")
    assert statuses(check_conformance(record))["enrollment_integer"] == "fail"


def test_endpoint_required_with_design_fields():
    record = make_record()
    record = record.replace(primary_endpoint=None)
    assert statuses(check_conformance(record))["endpoint_presence"] == "fail"


def test_phase3_min_enrollment(ontology):
    record = make_record(phase="PHASE3", enrollment=5)
    results = statuses(check_cross_field(record, ontology))
    assert results["phase3_min_enrollment"] == "fail"
    # scoped to Phase III only
    low_phase1 = make_record(phase="PHASE1", enrollment=5)
    assert statuses(check_cross_field(low_phase1, ontology))["phase3_min_enrollment"] == "pass"


def test_icd_coherence_via_ancestor(ontology):
    # C34 grounds to "non-small cell lung cancer" only through the ancestor
    # label "Lung neoplasms" token overlap
    record = make_record(diseases=["non-small cell lung cancer"], icdcode=["C34"])
    assert statuses(check_cross_field(record, ontology))["icd_coherence"] == "pass"


def test_icd_coherence_mismatch(ontology):
    record = make_record(diseases=["epilepsy"], icdcode=["C50"])
    assert statuses(check_cross_field(record, ontology))["icd_coherence"] == "fail"


def test_icd_unknown_code_skipped(ontology):
    record = make_record(icdcode=["X9999"])
    assert statuses(check_cross_field(record, ontology))["icd_coherence"] == "pass"


def test_unit_normalization(synonyms):
    record = make_record(criteria="age 18-75 yr, weight above 50 kgs")
    fixed, repairs = normalize_units_and_spelling(record, synonyms)
    assert "years" in fixed.criteria and "kg" in fixed.criteria
    assert any(r.rule_id == "unit_normalization" for r in repairs)


def test_synonym_canonicalization(synonyms):
    record = make_record(diseases=["NSCLC"], icdcode=["C3411"])
    fixed, repairs = normalize_units_and_spelling(record, synonyms)
    assert fixed.diseases == ("non-small cell lung cancer",)
    assert any(r.rule_id == "synonym_canonicalization" for r in repairs)


def test_empty_synonym_table_identity():
    record = make_record()
    fixed, repairs = normalize_units_and_spelling(record, SynonymTable({}))
    assert fixed == record and repairs == []


def test_preferred_labels_must_be_fixed_points():
    with pytest.raises(ValueError):
        SynonymTable({"a": "b", "b": "c"})


def test_validate_accept(ontology, synonyms):
    fixed, report = validate_record(make_record(), ontology, synonyms)
    assert report.verdict == ACCEPT
    assert fixed is not None and report.reason_codes == []


def test_validate_repairs_string_enrollment(ontology, synonyms):
    fixed, report = validate_record(make_record(enrollment="120"), ontology, synonyms)
    assert report.verdict == ACCEPT_REPAIRED
    assert fixed.enrollment == 120


def test_validate_rejects_with_reason_codes(ontology, synonyms):
    fixed, report = validate_record(make_record(phase="PHASE3", enrollment=5),
                                    ontology, synonyms)
    assert fixed is None
    assert report.verdict == REJECT
    assert report.reason_codes == ["phase3_min_enrollment"]


def test_multi_slot_failure_never_repaired(ontology, synonyms):
    fixed, report = validate_record(make_record(arms=1), ontology, synonyms)
    assert fixed is None
    assert "arm_comparator_agreement" in report.reason_codes


def test_idempotence(ontology, synonyms):
    record = make_record(enrollment="120", diseases=["IBS", "IBS"],
                         icdcode=["K58"])
    fixed, report = validate_record(record, ontology, synonyms)
    assert report.verdict == ACCEPT_REPAIRED
    again, report2 = validate_record(fixed, ontology, synonyms)
    assert report2.verdict == ACCEPT
    assert report2.repairs == []
    assert again == fixed


def test_report_json_schema(ontology, synonyms):
    _, report = validate_record(make_record(), ontology, synonyms)
    payload = report.to_json()
    assert set(payload) == {"record_id", "checks", "repairs", "verdict", "reason_codes"}
    assert all(set(c) == {"rule_id", "status", "detail"} for c in payload["checks"])


@settings(max_examples=30, deadline=None)
@given(surface=st.text(alphabet="abcdefgh ", min_size=1, max_size=12),
       target=st.sampled_from(["asthma", "heart failure", "psoriasis"]))
def test_monotonicity_adding_synonym_never_flips_pass_to_fail(surface, target):
    ontology = load_ontology(default_ontology_dir())
    base = SynonymTable.bundled()
    record = make_record(diseases=["asthma"], icdcode=["J45"])
    _, before = validate_record(record, ontology, base)
    grown = SynonymTable({**base.mapping, surface: target})
    _, after = validate_record(record, ontology, grown)
    if before.verdict != REJECT:
        assert after.verdict != REJECT


def test_config_thresholds(ontology, synonyms):
    lax = ValidatorConfig(phase3_min_enrollment=3)
    fixed, report = validate_record(make_record(phase="PHASE3", enrollment=5),
                                    ontology, synonyms, lax)
    assert fixed is not None
