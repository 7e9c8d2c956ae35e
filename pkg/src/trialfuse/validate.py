"""Quality-control battery: conformance, cross-field consistency,
normalization, and repair-or-reject with stable reason codes."""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

from .ontology import OntologyTable
from .schema import COMPARATOR_VALUES, TrialRecord

PASS = "pass"
REPAIRED = "repaired"
FAIL = "fail"

ACCEPT = "accept"
ACCEPT_REPAIRED = "accept_repaired"
REJECT = "reject"

DEFAULT_PHASE3_MIN_ENROLLMENT = 50
DEFAULT_ICD_MATCH_RATIO = 0.5

# Canonical unit spellings applied to the criteria narrative.
UNIT_MAP = {
    r"\byrs?\b": "years",
    r"\bkgs\b": "kg",
    r"\bmgs\b": "mg",
    r"\bmls?\b": "mL",
    r"\bmilliliters?\b": "mL",
    r"\bkilograms?\b": "kg",
    r"\bmilligrams?\b": "mg",
}

# rule_id -> slots it touches; multi-slot rules are never auto-repaired.
RULE_SLOTS = {
    "legal_phase": ("phase",),
    "enrollment_integer": ("enrollment",),
    "arms_integer": ("arms",),
    "arm_comparator_agreement": ("arms", "comparator"),
    "endpoint_presence": ("primary_endpoint", "arms", "comparator", "randomization"),
    "phase3_min_enrollment": ("phase", "enrollment"),
    "icd_coherence": ("icdcode", "diseases"),
}


@dataclass(frozen=True)
class CheckResult:
    rule_id: str
    status: str
    detail: str = ""


@dataclass(frozen=True)
class Repair:
    rule_id: str
    detail: str


@dataclass
class ValidationReport:
    record_id: str
    checks: list[CheckResult] = field(default_factory=list)
    repairs: list[Repair] = field(default_factory=list)
    verdict: str = ACCEPT
    reason_codes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "checks": [{"rule_id": c.rule_id, "status": c.status, "detail": c.detail}
                       for c in self.checks],
            "repairs": [{"rule_id": r.rule_id, "detail": r.detail} for r in self.repairs],
            "verdict": self.verdict,
            "reason_codes": self.reason_codes,
        }


class SynonymTable:
    """Case-folded surface form -> preferred label. Preferred labels are
    fixed points of the map."""

    def __init__(self, mapping: dict[str, str] | None = None):
        self.mapping = {k.casefold(): v for k, v in (mapping or {}).items()}
        for preferred in list(self.mapping.values()):
            if self.mapping.get(preferred.casefold(), preferred) != preferred:
                raise ValueError(f"preferred label {preferred!r} is not a fixed point")

    @classmethod
    def load(cls, path) -> "SynonymTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    @classmethod
    def bundled(cls) -> "SynonymTable":
        return cls.load(os.path.join(os.path.dirname(__file__), "data", "synonyms.json"))

    def canonical(self, surface: str) -> str:
        return self.mapping.get(surface.strip().casefold(), surface)

    def __len__(self):
        return len(self.mapping)


@dataclass(frozen=True)
class ValidatorConfig:
    phase3_min_enrollment: int = DEFAULT_PHASE3_MIN_ENROLLMENT
    icd_match_ratio: float = DEFAULT_ICD_MATCH_RATIO


def _is_intlike(value) -> bool:
    if isinstance(value, bool):
        return False
    if isinstance(value, int):
        return True
    if isinstance(value, str):
        return value.strip().lstrip("+").isdigit()
    return False


def _coerce_int(value) -> int:
    return int(str(value).strip())


def check_conformance(record: TrialRecord) -> list[CheckResult]:
    results = []

    # Phase tokens are enforced structurally by PhaseSet at parse time.
    results.append(CheckResult("legal_phase", PASS, record.phase.serialize()))

    if record.enrollment is None or _is_intlike(record.enrollment):
        results.append(CheckResult("enrollment_integer", PASS))
    else:
        results.append(CheckResult(
            "enrollment_integer", FAIL, f"non-integer enrollment {record.enrollment!r}"))

    if record.arms is None or _is_intlike(record.arms):
        results.append(CheckResult("arms_integer", PASS))
    else:
        results.append(CheckResult("arms_integer", FAIL, f"non-integer arms {record.arms!r}"))

    comparator = record.comparator
    if comparator is not None and comparator != "none" and comparator in COMPARATOR_VALUES:
        arms_ok = _is_intlike(record.arms) and _coerce_int(record.arms) >= 2
        if arms_ok:
            results.append(CheckResult("arm_comparator_agreement", PASS))
        else:
            results.append(CheckResult(
                "arm_comparator_agreement", FAIL,
                f"comparator {comparator!r} requires >= 2 arms, got {record.arms!r}"))
    else:
        results.append(CheckResult("arm_comparator_agreement", PASS, "no comparator"))

    design_present = any(v is not None for v in
                         (record.arms, record.comparator, record.randomization))
    if design_present and not record.primary_endpoint:
        results.append(CheckResult(
            "endpoint_presence", FAIL, "design fields present without primary endpoint"))
    else:
        results.append(CheckResult("endpoint_presence", PASS))

    return results


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.casefold()))


def _label_overlap(label: str, disease: str) -> float:
    label_tokens = _tokens(label)
    if not label_tokens:
        return 0.0
    return len(label_tokens & _tokens(disease)) / len(label_tokens)


def check_cross_field(record: TrialRecord, ontology: OntologyTable,
                      config: ValidatorConfig = ValidatorConfig()) -> list[CheckResult]:
    results = []

    if "III" in record.phase:
        enrollment = _coerce_int(record.enrollment) if _is_intlike(record.enrollment) else None
        if enrollment is None or enrollment < config.phase3_min_enrollment:
            results.append(CheckResult(
                "phase3_min_enrollment", FAIL,
                f"Phase III requires enrollment >= {config.phase3_min_enrollment}, "
                f"got {record.enrollment!r}"))
        else:
            results.append(CheckResult("phase3_min_enrollment", PASS))
    else:
        results.append(CheckResult("phase3_min_enrollment", PASS, "not Phase III"))

    for icd in record.icd_codes:
        if icd.code not in ontology:
            results.append(CheckResult(
                "icd_coherence", PASS, f"{icd.code} not in ontology; check skipped"))
            continue
        concept = ontology.get(icd.code)
        candidates = [concept] + ontology.ancestors(icd.code)
        matched = None
        for cand in candidates:
            for surface in (cand.preferred_label, *cand.synonyms):
                for disease in record.diseases:
                    if _label_overlap(surface, disease) >= config.icd_match_ratio:
                        matched = (cand.code, surface, disease)
                        break
                if matched:
                    break
            if matched:
                break
        if matched:
            results.append(CheckResult(
                "icd_coherence", PASS,
                f"{icd.code}: {matched[1]!r} matches {matched[2]!r}"))
        else:
            results.append(CheckResult(
                "icd_coherence", FAIL,
                f"{icd.code}: no label/ancestor matches any disease string"))

    return results


def normalize_units_and_spelling(record: TrialRecord,
                                 synonyms: SynonymTable) -> tuple[TrialRecord, list[Repair]]:
    repairs: list[Repair] = []

    criteria = record.criteria
    for pattern, canonical in UNIT_MAP.items():
        new = re.sub(pattern, canonical, criteria, flags=re.IGNORECASE)
        if new != criteria:
            repairs.append(Repair("unit_normalization", f"{pattern} -> {canonical}"))
            criteria = new

    def canon_list(values, slot):
        out = []
        for v in values:
            c = synonyms.canonical(v)
            if c != v:
                repairs.append(Repair("synonym_canonicalization", f"{slot}: {v!r} -> {c!r}"))
            out.append(c)
        return tuple(out)

    diseases = canon_list(record.diseases, "diseases")
    drugs = canon_list(record.drugs, "drugs")

    if not repairs:
        return record, []
    return record.replace(criteria=criteria, diseases=diseases, drugs=drugs), repairs


def _single_slot_repairs(record: TrialRecord,
                         checks: list[CheckResult]) -> tuple[TrialRecord, list[Repair], set[str]]:
    """Apply repairs for failing single-slot rules; return repaired rule ids."""
    repairs: list[Repair] = []
    repaired_rules: set[str] = set()

    for check in checks:
        if check.status != FAIL:
            continue
        if len(RULE_SLOTS.get(check.rule_id, ("?", "?"))) >= 2:
            continue
        if check.rule_id == "enrollment_integer" and _is_intlike(record.enrollment):
            value = _coerce_int(record.enrollment)
            record = record.replace(enrollment=value)
            repairs.append(Repair("enrollment_integer", f"coerced to {value}"))
            repaired_rules.add("enrollment_integer")
        elif check.rule_id == "arms_integer" and _is_intlike(record.arms):
            value = _coerce_int(record.arms)
            record = record.replace(arms=value)
            repairs.append(Repair("arms_integer", f"coerced to {value}"))
            repaired_rules.add("arms_integer")

    # Coerce numeric strings even when the conformance rule passed on the
    # string form, so accepted records satisfy the integer invariant.
    if isinstance(record.enrollment, str) and _is_intlike(record.enrollment):
        value = _coerce_int(record.enrollment)
        record = record.replace(enrollment=value)
        repairs.append(Repair("enrollment_integer", f"coerced to {value}"))
    if isinstance(record.arms, str) and _is_intlike(record.arms):
        value = _coerce_int(record.arms)
        record = record.replace(arms=value)
        repairs.append(Repair("arms_integer", f"coerced to {value}"))

    # Duplicate list entries are a single-slot inconsistency.
    for slot in ("diseases", "drugs"):
        values = getattr(record, slot)
        deduped = tuple(dict.fromkeys(values))
        if deduped != values:
            record = record.replace(**{slot: deduped})
            repairs.append(Repair(f"{slot}_deduplication", "dropped duplicate entries"))

    return record, repairs, repaired_rules


def validate_record(record: TrialRecord, ontology: OntologyTable,
                    synonyms: SynonymTable,
                    config: ValidatorConfig = ValidatorConfig()
                    ) -> tuple[TrialRecord | None, ValidationReport]:
    """Full battery. Returns (accepted record or None, report)."""
    report = ValidationReport(record_id=record.nct_id)

    original_diseases = record.diseases
    record, norm_repairs = normalize_units_and_spelling(record, synonyms)
    report.repairs.extend(norm_repairs)

    checks = check_conformance(record)
    record, slot_repairs, repaired_rules = _single_slot_repairs(record, checks)
    report.repairs.extend(slot_repairs)
    if repaired_rules:
        checks = check_conformance(record)  # re-evaluate after repair

    # Coherence matches against canonical and original surface forms, so
    # growing the synonym table can never turn a pass into a fail.
    coherence_view = record.replace(
        diseases=tuple(dict.fromkeys(record.diseases + original_diseases)))
    checks = checks + check_cross_field(coherence_view, ontology, config)
    report.checks = [
        CheckResult(c.rule_id, REPAIRED, c.detail)
        if c.rule_id in repaired_rules and c.status == PASS else c
        for c in checks
    ]

    failing = sorted({c.rule_id for c in report.checks if c.status == FAIL})
    if failing:
        report.verdict = REJECT
        report.reason_codes = failing
        return None, report

    report.verdict = ACCEPT_REPAIRED if report.repairs else ACCEPT
    return record, report
