import pytest

from trialfuse.schema import (IcdCode, MissingRequiredSlot, PhaseSet,
                              TrialRecord, TypeMismatch, parse_record,
                              serialize_record, slot_order)

IBS_ROW = {
    "nct_id": "NCT00000001",
    "phase": "PHASE1, PHASE2",
    "diseases": ["Irritable Bowel Syndrome"],
    "drugs": ["saccharomyces cerevisiae"],
    "icdcode": ["D6861"],
    "criteria": "Inclusion Criteria:\n* adults.\nExclusion Criteria:\n* children.",
}


def test_parse_multiphase_record():
    record = parse_record(IBS_ROW)
    assert record.phase.phases == frozenset({"I", "II"})
    assert record.diseases == ("Irritable Bowel Syndrome",)
    assert record.icd_codes[0].code == "D6861"


def test_empty_object_missing_required():
    with pytest.raises(MissingRequiredSlot) as exc:
        parse_record({})
    assert exc.value.slot_name == "nct_id"


def test_phase4_outside_value_space():
    row = dict(IBS_ROW, phase="PHASE4")
    with pytest.raises(TypeMismatch) as exc:
        parse_record(row)
    assert exc.value.slot_name == "phase"


def test_slot_order_constant():
    order = slot_order()
    assert order[0] == "phase"
    assert order[:6] == ["phase", "diseases", "drugs", "smiles", "icdcode", "criteria"]
    assert order.index("criteria") < order.index("enrollment")
    assert order == slot_order()


def test_case_insensitive_keys_and_unknown_fields():
    row = dict(IBS_ROW)
    row["Phase"] = row.pop("phase")
    row["totally_unknown"] = 42
    record = parse_record(row)
    assert "I" in record.phase


def test_enrollment_string_survives_parse():
    record = parse_record(dict(IBS_ROW, enrollment="120"))
    assert record.enrollment == "120"


def test_enrollment_negative_rejected():
    with pytest.raises(TypeMismatch):
        parse_record(dict(IBS_ROW, enrollment=-5))


def test_label_validation():
    assert parse_record(dict(IBS_ROW, label=1)).label == 1
    with pytest.raises(TypeMismatch):
        parse_record(dict(IBS_ROW, label=2))


def test_serialize_roundtrip_fixed_point():
    record = parse_record(dict(IBS_ROW, enrollment=120, arms=2,
                               comparator="placebo", label=0))
    once = serialize_record(record)
    again = serialize_record(parse_record(once))
    assert once == again


def test_phaseset_serialize_and_lowest():
    ps = PhaseSet.parse(["PHASE3", "PHASE2"])
    assert ps.serialize() == "PHASE2, PHASE3"
    assert ps.lowest() == "II"


def test_icd_code_regex():
    assert IcdCode.parse("d6861").code == "D6861"
    with pytest.raises(TypeMismatch):
        IcdCode.parse("6861")


def test_determinism():
    assert parse_record(IBS_ROW) == parse_record(dict(IBS_ROW))
