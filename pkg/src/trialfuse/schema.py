"""Canonical trial record, slot ordering, and controlled value spaces."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields

PHASE_TOKENS = {"PHASE1": "I", "PHASE2": "II", "PHASE3": "III"}
PHASE_NAMES = {"I": "PHASE1", "II": "PHASE2", "III": "PHASE3"}
_PHASE_ORDER = ["I", "II", "III"]

ICD_CODE_RE = re.compile(r"^[A-Z]\d{2}\d*$")

# The six core slots come first in this fixed order; extended slots are
# appended and their relative order is a compile-time constant.
_CORE_SLOTS = ("phase", "diseases", "drugs", "smiles", "icdcode", "criteria")
_EXTENDED_SLOTS = (
    "enrollment",
    "arms",
    "randomization",
    "blinding",
    "comparator",
    "primary_endpoint",
)

BLINDING_VALUES = {"open", "single", "double"}
COMPARATOR_VALUES = {"placebo", "standard_of_care", "active", "none"}


class SchemaError(ValueError):
    pass


class MissingRequiredSlot(SchemaError):
    def __init__(self, slot_name: str):
        super().__init__(f"missing required slot: {slot_name}")
        self.slot_name = slot_name


class TypeMismatch(SchemaError):
    def __init__(self, slot_name: str, detail: str = ""):
        msg = f"type mismatch for slot: {slot_name}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.slot_name = slot_name


def slot_order() -> list[str]:
    """Fixed linearization order: six core slots, then extended slots."""
    return list(_CORE_SLOTS) + list(_EXTENDED_SLOTS)


@dataclass(frozen=True)
class PhaseSet:
    """Non-empty subset of phases I-III. Phase IV is outside the value space."""

    phases: frozenset[str]

    def __post_init__(self):
        if not self.phases:
            raise TypeMismatch("phase", "at least one phase required")
        if not self.phases <= set(_PHASE_ORDER):
            raise TypeMismatch("phase", f"illegal phases {sorted(self.phases)}")

    @classmethod
    def parse(cls, value) -> "PhaseSet":
        if isinstance(value, PhaseSet):
            return value
        if isinstance(value, str):
            tokens = [t.strip() for t in value.split(",") if t.strip()]
        elif isinstance(value, (list, tuple)):
            tokens = [str(t).strip() for t in value]
        else:
            raise TypeMismatch("phase", f"cannot parse {type(value).__name__}")
        phases = set()
        for tok in tokens:
            up = tok.upper().replace(" ", "")
            if up in PHASE_TOKENS:
                phases.add(PHASE_TOKENS[up])
            elif up in PHASE_NAMES:
                phases.add(up)
            else:
                raise TypeMismatch("phase", f"unknown phase token {tok!r}")
        return cls(frozenset(phases))

    def serialize(self) -> str:
        return ", ".join(PHASE_NAMES[p] for p in _PHASE_ORDER if p in self.phases)

    def lowest(self) -> str:
        """Primary phase for stratification: the lowest phase in the set."""
        for p in _PHASE_ORDER:
            if p in self.phases:
                return p
        raise AssertionError("empty PhaseSet")

    def __contains__(self, phase: str) -> bool:
        return phase in self.phases

    def __iter__(self):
        return (p for p in _PHASE_ORDER if p in self.phases)


@dataclass(frozen=True)
class IcdCode:
    code: str
    tree_parent: "IcdCode | None" = None

    def __post_init__(self):
        if not ICD_CODE_RE.match(self.code):
            raise TypeMismatch("icdcode", f"malformed code {self.code!r}")

    @classmethod
    def parse(cls, value) -> "IcdCode":
        if isinstance(value, IcdCode):
            return value
        if not isinstance(value, str):
            raise TypeMismatch("icdcode", f"cannot parse {type(value).__name__}")
        return cls(value.strip().upper())


@dataclass(frozen=True)
class SmilesString:
    raw: str
    canonical: str | None = None


@dataclass(frozen=True)
class TrialRecord:
    """One trial-phase instance. Immutable after construction.

    ``enrollment`` and ``arms`` may hold non-coerced raw values straight from
    JSON (e.g. the string "120"); coercion and rejection of junk values is the
    validator's job, not the parser's.
    """

    nct_id: str
    phase: PhaseSet
    diseases: tuple[str, ...]
    icd_codes: tuple[IcdCode, ...] = ()
    drugs: tuple[str, ...] = ()
    smiles: tuple[SmilesString, ...] = ()
    enrollment: object = None
    arms: object = None
    randomization: bool | None = None
    blinding: str | None = None
    comparator: str | None = None
    primary_endpoint: str | None = None
    criteria: str = ""
    brief_summary: str | None = None
    text_description: str | None = None
    label: int | None = None

    def replace(self, **changes) -> "TrialRecord":
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(changes)
        return TrialRecord(**current)


_FIELD_ALIASES = {
    "icdcode": "icd_codes",
    "icd_codes": "icd_codes",
    "nctid": "nct_id",
    "nct_id": "nct_id",
}

_REQUIRED = ("nct_id", "phase", "diseases", "drugs", "criteria")


def _as_str_list(value, slot: str) -> tuple[str, ...]:
    if isinstance(value, str):
        return (value,)
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            if not isinstance(v, (str, int, float)):
                raise TypeMismatch(slot, f"non-string element {v!r}")
            out.append(str(v))
        return tuple(out)
    raise TypeMismatch(slot, f"expected string or list, got {type(value).__name__}")


def parse_record(json_object: dict) -> TrialRecord:
    """Parse one JSON object into a TrialRecord.

    Unknown fields are ignored; slot names are matched case-insensitively.
    Missing optional fields stay absent.
    """
    if not isinstance(json_object, dict):
        raise TypeMismatch("<record>", "expected a JSON object")
    normalized: dict[str, object] = {}
    for key, value in json_object.items():
        lk = str(key).strip().lower()
        lk = _FIELD_ALIASES.get(lk, lk)
        normalized[lk] = value

    for slot in _REQUIRED:
        if normalized.get(slot) is None:
            raise MissingRequiredSlot(slot)

    nct_id = str(normalized["nct_id"])
    phase = PhaseSet.parse(normalized["phase"])
    diseases = _as_str_list(normalized["diseases"], "diseases")
    drugs = _as_str_list(normalized["drugs"], "drugs")
    criteria = normalized["criteria"]
    if not isinstance(criteria, str):
        raise TypeMismatch("criteria", "expected string")

    icd_raw = normalized.get("icd_codes") or ()
    icd_codes = tuple(IcdCode.parse(c) for c in _as_str_list(icd_raw, "icdcode"))

    smiles_raw = normalized.get("smiles") or ()
    smiles = tuple(SmilesString(raw=s) for s in _as_str_list(smiles_raw, "smiles"))

    enrollment = normalized.get("enrollment")
    if isinstance(enrollment, (dict, list)):
        raise TypeMismatch("enrollment", "expected scalar")
    if isinstance(enrollment, bool):
        raise TypeMismatch("enrollment", "expected integer")
    if isinstance(enrollment, float):
        if enrollment != int(enrollment):
            raise TypeMismatch("enrollment", "non-integral number")
        enrollment = int(enrollment)
    if isinstance(enrollment, int) and enrollment < 0:
        raise TypeMismatch("enrollment", "negative count")

    arms = normalized.get("arms")
    if isinstance(arms, (dict, list, bool)):
        raise TypeMismatch("arms", "expected scalar")

    randomization = normalized.get("randomization")
    if randomization is not None and not isinstance(randomization, bool):
        if isinstance(randomization, str) and randomization.lower() in ("true", "false"):
            randomization = randomization.lower() == "true"
        else:
            raise TypeMismatch("randomization", "expected boolean")

    blinding = normalized.get("blinding")
    if blinding is not None:
        blinding = str(blinding).strip().lower()
        if blinding not in BLINDING_VALUES:
            raise TypeMismatch("blinding", f"unknown value {blinding!r}")

    comparator = normalized.get("comparator")
    if comparator is not None:
        comparator = str(comparator).strip().lower()
        if comparator not in COMPARATOR_VALUES:
            raise TypeMismatch("comparator", f"unknown value {comparator!r}")

    primary_endpoint = normalized.get("primary_endpoint")
    if primary_endpoint is not None:
        primary_endpoint = str(primary_endpoint)

    label = normalized.get("label")
    if label is not None:
        if label not in (0, 1):
            raise TypeMismatch("label", "expected binary outcome")
        label = int(label)

    brief_summary = normalized.get("brief_summary")
    text_description = normalized.get("text_description")

    return TrialRecord(
        nct_id=nct_id,
        phase=phase,
        diseases=diseases,
        icd_codes=icd_codes,
        drugs=drugs,
        smiles=smiles,
        enrollment=enrollment,
        arms=arms,
        randomization=randomization,
        blinding=blinding,
        comparator=comparator,
        primary_endpoint=primary_endpoint,
        criteria=criteria,
        brief_summary=brief_summary if brief_summary is None else str(brief_summary),
        text_description=text_description if text_description is None else str(text_description),
        label=label,
    )


def serialize_record(record: TrialRecord) -> dict:
    """Canonical JSON form; parse_record(serialize_record(r)) is a fixed point."""
    out: dict[str, object] = {
        "nct_id": record.nct_id,
        "phase": record.phase.serialize(),
        "diseases": list(record.diseases),
        "drugs": list(record.drugs),
        "criteria": record.criteria,
    }
    if record.icd_codes:
        out["icdcode"] = [c.code for c in record.icd_codes]
    if record.smiles:
        out["smiles"] = [s.raw for s in record.smiles]
    for name in ("enrollment", "arms", "randomization", "blinding", "comparator",
                 "primary_endpoint", "brief_summary", "text_description", "label"):
        value = getattr(record, name)
        if value is not None:
            out[name] = value
    return out


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
