"""Slot linearization, prompt assembly, and narrative generation.

The offline template renderer is the default narrative source; a remote LLM
client is an interface with a recorded-fixture implementation for tests.
"""
from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass

from .schema import TrialRecord, slot_order

PROMPT_PREFIX = (
    "You are a clinical-trial annotation assistant. You are given normalized "
    "clinical-trial fields as key:value slots in the following fixed order:\n"
    "phase; diseases (ICD-10/MeSH); drugs; smiles; icdcode; criteria (Inclusion/Exclusion).\n"
    "Use the values as facts; do not invent or infer missing data.\n"
    "Use preferred ICD/MeSH labels and include UMLS CUI when available in parentheses.\n"
    "Keep units and numerics unchanged; normalize spelling; no citations in the output."
)

PROMPT_SUFFIX = (
    "Style: factual, concise, no speculation. Keep slot order semantics in your wording.\n"
    "If a value is missing or out of vocabulary, write 'unknown'.\n"
    "Emit two artifacts:\n"
    "(A) brief_summary: exactly one sentence summarizing phase(s), indication, "
    "intervention, comparator (if present), and primary endpoint.\n"
    "(B) text_description: a short paragraph (3-5 sentences) covering population, "
    "design (randomization/blinding/arms), comparator, primary endpoint, and key "
    "eligibility themes.\n"
    "Do not copy eligibility criteria verbatim; summarize key inclusion and exclusion "
    "themes in a deterministic manner while preserving all numeric thresholds, "
    "units, and logical constraints (e.g., inequalities, temporal windows).\n"
    "Use ICD/MeSH preferred labels and UMLS CUI when provided.\n"
    "Decoding: temperature=0; no sampling."
)

MISSING_TOKEN = "unknown"

SUMMARY_TOKEN_CAP = 64
DESCRIPTION_TOKEN_CAP = 256

# Trailing-dot abbreviations that must not end a sentence during counting.
ABBREVIATIONS = ("e.g.", "i.e.", "vs.", "etc.", "dr.", "no.", "approx.")


class TextualizeError(Exception):
    pass


class ClientUnavailable(TextualizeError):
    pass


class MalformedResponse(TextualizeError):
    def __init__(self, raw_text: str):
        super().__init__("response did not contain both narrative artifacts")
        self.raw_text = raw_text


@dataclass(frozen=True)
class SlotList:
    entries: tuple[tuple[str, str], ...]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class PromptBundle:
    schema_prefix: str
    slots: SlotList
    instruction_suffix: str

    def render(self) -> str:
        lines = [f"{name}: {value};" for name, value in self.slots]
        return self.schema_prefix + "\n" + "\n".join(lines) + "\n" + self.instruction_suffix


@dataclass(frozen=True)
class NarrativePair:
    brief_summary: str
    text_description: str


def _render_list(values) -> str:
    return "[" + ", ".join(f"'{v}'" for v in values) + "]"


def _render_slot(record: TrialRecord, name: str) -> str:
    value = getattr(record, "icd_codes" if name == "icdcode" else name, None)
    if name == "phase":
        return record.phase.serialize()
    if name == "diseases":
        return _render_list(record.diseases)
    if name == "drugs":
        return _render_list(record.drugs)
    if name == "smiles":
        if not record.smiles:
            return MISSING_TOKEN
        # SMILES go in verbatim, unmodified.
        return _render_list(s.raw for s in record.smiles)
    if name == "icdcode":
        if not record.icd_codes:
            return MISSING_TOKEN
        return _render_list(c.code for c in record.icd_codes)
    if name == "criteria":
        return record.criteria.replace("\n", "\\n")
    if value is None:
        return MISSING_TOKEN
    if name == "randomization":
        return "randomized" if value else "non-randomized"
    return str(value).replace("\n", "\\n")


def linearize(record: TrialRecord) -> SlotList:
    """One key:value entry per slot in slot_order(); absent values render
    as the literal token "unknown"."""
    return SlotList(tuple((name, _render_slot(record, name)) for name in slot_order()))


def assemble_prompt(slots: SlotList) -> PromptBundle:
    if len(slots) == 0:
        raise ValueError("assemble_prompt requires a nonempty SlotList")
    return PromptBundle(PROMPT_PREFIX, slots, PROMPT_SUFFIX)


_BRACKETS = {"(": ")", "[": "]", "{": "}"}


def split_sentences(text: str) -> list[str]:
    """Split on {., !, ?} outside brackets, skipping known abbreviations."""
    sentences = []
    depth = 0
    start = 0
    i = 0
    lowered = text.lower()
    while i < len(text):
        ch = text[i]
        if ch in _BRACKETS:
            depth += 1
        elif ch in _BRACKETS.values():
            depth = max(0, depth - 1)
        elif ch in ".!?" and depth == 0:
            # a dot anywhere inside a known abbreviation is not a terminator
            is_abbrev = ch == "." and any(
                0 <= i - p and lowered.startswith(a, i - p)
                for a in ABBREVIATIONS
                for p, c in enumerate(a) if c == "."
            )
            if not is_abbrev:
                segment = text[start : i + 1].strip()
                if segment:
                    sentences.append(segment)
                start = i + 1
        i += 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def count_sentences(text: str) -> int:
    return len(split_sentences(text))


def _cap_tokens(text: str, cap: int) -> str:
    tokens = text.split()
    if len(tokens) <= cap:
        return text
    return " ".join(tokens[:cap])


def _or_unknown(value) -> str:
    return MISSING_TOKEN if value in (None, "") else str(value)


def render_offline(record: TrialRecord) -> NarrativePair:
    """Deterministic template renderer standing in for the LLM path."""
    phases = record.phase.serialize()
    diseases = " and ".join(record.diseases) if record.diseases else MISSING_TOKEN
    drugs = " and ".join(record.drugs) if record.drugs else MISSING_TOKEN
    comparator = _or_unknown(record.comparator)
    endpoint = _or_unknown(record.primary_endpoint)
    enrollment = _or_unknown(record.enrollment)
    arms = _or_unknown(record.arms)
    blinding = _or_unknown(record.blinding)
    randomization = (
        MISSING_TOKEN
        if record.randomization is None
        else ("randomized" if record.randomization else "non-randomized")
    )

    summary = (
        f"This {phases} trial evaluates {drugs} in patients with {diseases}, "
        f"enrolling {enrollment} participants, with comparator {comparator} "
        f"and primary endpoint {endpoint}."
    )

    incl, excl = _eligibility_themes(record.criteria)
    description_sentences = [
        f"This is a clinical trial in {phases} involving patients with {diseases} "
        f"receiving {drugs}.",
        f"The study plans to enroll {enrollment} participants in a {randomization} "
        f"design with {arms} arms and {blinding} blinding.",
        f"The comparator is {comparator} and the primary endpoint is {endpoint}.",
        f"Key inclusion themes: {incl}; key exclusion themes: {excl}.",
    ]
    description = " ".join(description_sentences)

    return NarrativePair(
        brief_summary=_cap_tokens(summary, SUMMARY_TOKEN_CAP),
        text_description=_cap_tokens(description, DESCRIPTION_TOKEN_CAP),
    )


def _eligibility_themes(criteria: str) -> tuple[str, str]:
    """Compress criteria into inclusion/exclusion theme phrases, preserving
    numeric thresholds verbatim."""
    from .embedding import split_eligibility  # local import: no cycle at module load

    incl, excl = split_eligibility(criteria)

    def summarize(items):
        if not items:
            return "none stated"
        phrases = [re.sub(r"[.;]+$", "", it.strip(" *")) for it in items[:3]]
        return "; ".join(p for p in phrases if p) or "none stated"

    return summarize(incl), summarize(excl)


class LlmClient:
    """Remote textualization interface; implementations must decode at T=0."""

    def complete(self, prompt: str) -> str:
        raise NotImplementedError


class FixtureClient(LlmClient):
    """Replays recorded responses keyed by nct_id embedded in the prompt."""

    def __init__(self, fixture_path):
        self.responses: dict[str, str] = {}
        with open(fixture_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    self.responses[row["key"]] = row["response"]

    def complete(self, prompt: str) -> str:
        for key, response in self.responses.items():
            if key in prompt:
                return response
        raise ClientUnavailable("no recorded fixture response for prompt")


_ARTIFACT_RE = re.compile(
    r"\(A\)\s*(?:brief_summary\s*:)?\s*(?P<summary>.*?)\s*"
    r"\(B\)\s*(?:text_description\s*:)?\s*(?P<description>.+)",
    re.DOTALL,
)


def parse_response(raw_text: str) -> NarrativePair:
    m = _ARTIFACT_RE.search(raw_text)
    if not m:
        raise MalformedResponse(raw_text)
    summary = m.group("summary").strip()
    description = m.group("description").strip()
    if not summary or not description:
        raise MalformedResponse(raw_text)
    return NarrativePair(summary, description)


def textualize_remote(bundle: PromptBundle, client: LlmClient,
                      audit_log=None) -> NarrativePair:
    prompt = bundle.render()
    try:
        raw = client.complete(prompt)
    except ClientUnavailable:
        raise
    except Exception as exc:  # network-level failures surface uniformly
        raise ClientUnavailable(str(exc)) from exc
    if audit_log is not None:
        audit_log.append({"prompt": prompt, "response": raw})
    return parse_response(raw)


def persist_artifacts(record: TrialRecord, pair: NarrativePair,
                      raw_log_path, processed_path) -> None:
    """Processed store is idempotent per nct_id; raw log is append-only."""
    try:
        with open(raw_log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "nct_id": record.nct_id,
                "prompt": assemble_prompt(linearize(record)).render(),
                "response": f"(A) {pair.brief_summary}\n(B) {pair.text_description}",
                "timestamp": time.time(),
            }, sort_keys=True) + "\n")

        rows: dict[str, dict] = {}
        try:
            with open(processed_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        rows[row["nct_id"]] = row
        except FileNotFoundError:
            pass
        rows[record.nct_id] = {
            "nct_id": record.nct_id,
            "brief_summary": pair.brief_summary,
            "text_description": pair.text_description,
        }
        with open(processed_path, "w", encoding="utf-8") as fh:
            for row in rows.values():
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as exc:
        raise IOError(f"cannot persist artifacts: {exc}") from exc
