import json

import pytest

from trialfuse.schema import parse_record
from trialfuse.textualize import (PROMPT_PREFIX, PROMPT_SUFFIX, FixtureClient,
                                  MalformedResponse, NarrativePair,
                                  assemble_prompt, count_sentences, linearize,
                                  parse_response, persist_artifacts,
                                  render_offline, split_sentences,
                                  textualize_remote, SlotList)

IBS_ROW = {
    "nct_id": "NCT00000001",
    "phase": "PHASE1, PHASE2",
    "diseases": ["Irritable Bowel Syndrome"],
    "drugs": ["saccharomyces cerevisiae"],
    "icdcode": ["D6861"],
    "criteria": ("Inclusion Criteria:\n"
                 "* Male and female patients between 18 and 75 years of age,\n"
                 "* Patients having confirmed IBS according to Rome IV criteria,\n"
                 "Exclusion Criteria:\n"
                 "* Pregnancy,\n"
                 "* Chronic alcoholism."),
}


@pytest.fixture
def ibs_record():
    return parse_record(IBS_ROW)


def test_linearize_first_entries(ibs_record):
    slots = list(linearize(ibs_record))
    assert slots[0] == ("phase", "PHASE1, PHASE2")
    assert slots[1] == ("diseases", "['Irritable Bowel Syndrome']")


def test_linearize_absent_slot_is_unknown(ibs_record):
    entries = dict(linearize(ibs_record))
    assert entries["enrollment"] == "unknown"
    assert entries["smiles"] == "unknown"


def test_linearize_values_single_line(ibs_record):
    for _, value in linearize(ibs_record):
        assert "\n" not in value


def test_linearize_deterministic(ibs_record):
    assert linearize(ibs_record) == linearize(ibs_record)


def test_prompt_prefix_and_shape(ibs_record):
    bundle = assemble_prompt(linearize(ibs_record))
    text = bundle.render()
    assert text.startswith("You are a clinical-trial annotation assistant")
    assert bundle.schema_prefix == PROMPT_PREFIX
    assert bundle.instruction_suffix == PROMPT_SUFFIX
    assert "phase: PHASE1, PHASE2;" in text


def test_assemble_prompt_empty_slots_rejected():
    with pytest.raises(ValueError):
        assemble_prompt(SlotList(()))


def test_assemble_prompt_deterministic(ibs_record):
    slots = linearize(ibs_record)
    assert assemble_prompt(slots).render() == assemble_prompt(slots).render()


def test_render_offline_mentions_key_values(ibs_record):
    pair = render_offline(ibs_record)
    assert "Irritable Bowel Syndrome" in pair.brief_summary
    assert "saccharomyces cerevisiae" in pair.brief_summary
    assert "PHASE1" in pair.brief_summary and "PHASE2" in pair.brief_summary


def test_render_offline_all_optionals_absent_three_unknowns(ibs_record):
    pair = render_offline(ibs_record)
    assert pair.brief_summary.count("unknown") == 3


def test_render_offline_deterministic(ibs_record):
    assert render_offline(ibs_record) == render_offline(ibs_record)


def test_summary_single_sentence_and_description_3_to_5(ibs_record):
    record = ibs_record.replace(enrollment=120, arms=2, randomization=True,
                                blinding="double", comparator="placebo",
                                primary_endpoint="change in pain score at week 8")
    pair = render_offline(record)
    assert count_sentences(pair.brief_summary) == 1
    assert 3 <= count_sentences(pair.text_description) <= 5


def test_numeric_values_preserved_in_description(ibs_record):
    record = ibs_record.replace(enrollment=120, arms=3)
    pair = render_offline(record)
    assert "120" in pair.text_description
    assert "3" in pair.text_description
    # numeric thresholds from the criteria survive into the themes
    assert "18" in pair.text_description and "75" in pair.text_description


def test_token_caps(ibs_record):
    pair = render_offline(ibs_record)
    assert len(pair.brief_summary.split()) <= 64
    assert len(pair.text_description.split()) <= 256


def test_split_sentences_brackets_and_abbreviations():
    text = "Patients (incl. those aged 18-75) are eligible, e.g. adults. Children are not."
    assert count_sentences(text) == 2
    assert split_sentences("One. Two! Three?") == ["One.", "Two!", "Three?"]


def test_parse_response_happy_and_malformed():
    pair = parse_response("(A) A summary. (B) A description.")
    assert pair == NarrativePair("A summary.", "A description.")
    with pytest.raises(MalformedResponse):
        parse_response("(A) only a summary, no second artifact")


def test_fixture_client_roundtrip(tmp_path, ibs_record):
    fixture = tmp_path / "responses.jsonl"
    fixture.write_text(json.dumps({
        "key": "Irritable Bowel Syndrome",
        "response": "(A) Recorded summary. (B) Recorded description."}) + "\n")
    client = FixtureClient(fixture)
    bundle = assemble_prompt(linearize(ibs_record))
    audit = []
    pair = textualize_remote(bundle, client, audit_log=audit)
    assert pair.brief_summary == "Recorded summary."
    assert len(audit) == 1 and "prompt" in audit[0]


def test_persist_artifacts_idempotent_processed(tmp_path, ibs_record):
    raw = tmp_path / "raw.jsonl"
    processed = tmp_path / "processed.jsonl"
    pair = render_offline(ibs_record)
    persist_artifacts(ibs_record, pair, raw, processed)
    persist_artifacts(ibs_record, pair, raw, processed)
    assert len(raw.read_text().splitlines()) == 2        # append-only audit
    assert len(processed.read_text().splitlines()) == 1  # overwritten by key


def test_persist_artifacts_unwritable_path(tmp_path, ibs_record):
    pair = render_offline(ibs_record)
    with pytest.raises(IOError):
        persist_artifacts(ibs_record, pair,
                          tmp_path / "missing" / "raw.jsonl",
                          tmp_path / "missing" / "processed.jsonl")
