"""Manifest-driven export: processed JSONL in, CTOPEMB1 cache out."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .cache import content_hash, write_cache
from .encoders import OUTPUT_DIM, build_encoder
from .texts import TOKEN_CAPS, record_texts

DEFAULT_ENCODERS = {
    "molecular": "seyonec/ChemBERTa-zinc-base-v1",
    "protocol": "medicalai/ClinicalBERT",
    "ontology": "medicalai/ClinicalBERT",
    # Per-sentence eligibility entries go to the clinical encoder; the
    # consumer pools them itself.
    "criteria.inclusion": "medicalai/ClinicalBERT",
    "criteria.exclusion": "medicalai/ClinicalBERT",
}

# Encoder-side token budgets; eligibility sentences share the protocol cap.
ENCODE_CAPS = dict(TOKEN_CAPS,
                   **{"criteria.inclusion": TOKEN_CAPS["protocol"],
                      "criteria.exclusion": TOKEN_CAPS["protocol"]})


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ExportManifest:
    input_path: str
    cache_path: str
    encoders: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_ENCODERS))
    caps: dict[str, int] = field(default_factory=lambda: dict(ENCODE_CAPS))
    dim: int = OUTPUT_DIM
    allow_download: bool = True

    def __post_init__(self):
        if self.dim != OUTPUT_DIM:
            raise ManifestError(f"output dim must be {OUTPUT_DIM}")
        missing = set(DEFAULT_ENCODERS) - set(self.encoders)
        if missing:
            raise ManifestError(f"manifest lacks encoders for {sorted(missing)}")


def load_manifest(path) -> ExportManifest:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {"input_path", "cache_path", "encoders", "caps", "dim",
             "allow_download"}
    unknown = set(raw) - known
    if unknown:
        raise ManifestError(f"unknown manifest keys {sorted(unknown)}")
    if "encoders" in raw:
        raw["encoders"] = {**DEFAULT_ENCODERS, **raw["encoders"]}
    if "caps" in raw:
        raw["caps"] = {**ENCODE_CAPS, **raw["caps"]}
    try:
        return ExportManifest(**raw)
    except TypeError as exc:
        raise ManifestError(str(exc)) from exc


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def export(manifest: ExportManifest) -> int:
    """Encode every unique (modality, text) pair and write the cache.

    Entries keep first-appearance order and inference runs single threaded,
    so two exports of the same input are byte-identical.
    """
    torch.set_num_threads(1)
    rows = read_jsonl(manifest.input_path)
    pending: dict[bytes, tuple[str, str]] = {}
    for row in rows:
        for modality, text in record_texts(row):
            pending.setdefault(content_hash(modality, text), (modality, text))

    encoders = {}
    for modality, name in manifest.encoders.items():
        if name not in encoders:
            encoders[name] = build_encoder(name, manifest.allow_download,
                                           manifest.dim)

    entries: dict[bytes, np.ndarray] = {}
    for digest, (modality, text) in pending.items():
        encoder = encoders[manifest.encoders[modality]]
        cap = manifest.caps.get(modality, 512)
        entries[digest] = encoder.encode(text, cap)
    write_cache(manifest.cache_path, manifest.dim, entries)
    return len(entries)
