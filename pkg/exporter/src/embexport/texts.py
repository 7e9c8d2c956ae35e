"""Derivation of encoder inputs (and cache-key texts) from processed records.

This mirrors the consumer's text-derivation contract without linking against
it: per-modality texts, whitespace-token caps, and the eligibility sentence
grouping. The grouping is pinned by shared golden split files checked in the
test suite.
"""
from __future__ import annotations

import re

# Whitespace-token caps per encoder modality; cache keys are the capped texts.
TOKEN_CAPS = {"molecular": 128, "protocol": 512, "ontology": 128}

ELIG_INCL_MODALITY = "criteria.inclusion"
ELIG_EXCL_MODALITY = "criteria.exclusion"

_SENTENCE_SPLIT_RE = re.compile(r"[\n*]+|(?<=[.!?;])\s+")
_INCLUSION_RE = re.compile(r"\b(include[sd]?|including|inclusion|eligible)\b", re.I)
_EXCLUSION_RE = re.compile(
    r"\b(exclude[sd]?|excluding|exclusion|not\s+eligible|ineligible)\b", re.I)
_HEADER_RE = re.compile(r"^\s*(inclusion|exclusion)\s+criteria\s*:?\s*$", re.I)


def split_eligibility(criteria: str) -> tuple[list[str], list[str]]:
    """Sentence-segment the criteria text and route each sentence to the
    inclusion or exclusion group by the nearest preceding trigger phrase."""
    inclusion: list[str] = []
    exclusion: list[str] = []
    group = inclusion
    for raw in _SENTENCE_SPLIT_RE.split(criteria or ""):
        sentence = raw.strip(" \t,;")
        if not sentence:
            continue
        if _HEADER_RE.match(sentence):
            group = exclusion if sentence.lower().startswith("exclusion") else inclusion
            continue
        if _EXCLUSION_RE.search(sentence):
            group = exclusion
        elif _INCLUSION_RE.search(sentence):
            group = inclusion
        group.append(sentence)
    return inclusion, exclusion


def truncate_tokens(modality: str, text: str) -> str:
    """Whitespace-token cap. Narrative texts arriving here were already
    produced under tighter generation caps, so protocol truncation is a
    safety net, not a routine path."""
    cap = TOKEN_CAPS.get(modality)
    if cap is None:
        return text
    tokens = text.split()
    if len(tokens) <= cap:
        return text
    return " ".join(tokens[:cap])


def record_texts(row: dict) -> list[tuple[str, str]]:
    """(encoder modality, capped text) pairs for one processed JSONL row.

    SMILES are expected in canonical form (the upstream textualize stage
    canonicalizes them); the exporter embeds them verbatim.
    """
    pairs: list[tuple[str, str]] = []
    if row.get("smiles"):
        pairs.append(("molecular", "; ".join(row["smiles"])))
    disease_terms = list(row.get("diseases") or []) + list(row.get("icdcode") or [])
    if disease_terms:
        pairs.append(("ontology", "; ".join(disease_terms)))
    for field in ("brief_summary", "text_description"):
        if row.get(field):
            pairs.append(("protocol", row[field]))
    if row.get("enrollment") is not None:
        pairs.append(("protocol", str(row["enrollment"])))
    if row.get("drugs"):
        pairs.append(("molecular", "; ".join(row["drugs"])))
    pairs = [(m, truncate_tokens(m, t)) for m, t in pairs]
    incl, excl = split_eligibility(row.get("criteria") or "")
    pairs += [(ELIG_INCL_MODALITY, s) for s in incl]
    pairs += [(ELIG_EXCL_MODALITY, s) for s in excl]
    return pairs
