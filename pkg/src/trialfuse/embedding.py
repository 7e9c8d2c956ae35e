"""Encoders, eligibility pooling, shared-space projection, and the
content-addressed embedding cache."""
from __future__ import annotations

import hashlib
import os
import re
import struct
from dataclasses import dataclass

import numpy as np

EMBED_DIM = 768
ELIG_DIM = 2 * EMBED_DIM

CACHE_MAGIC = b"CTOPEMB1"

# Per-modality whitespace-token caps and the record-level global cap.
TOKEN_CAPS = {"molecular": 128, "protocol": 512, "ontology": 128}
GLOBAL_TOKEN_CAP = 1024
PRIORITY_KEYWORDS = ("primary endpoint", "endpoint", "inclusion", "exclusion")

# Derived cache-key modalities for per-sentence eligibility vectors. The
# exporter writes the same keys so the pooling stays on this side.
ELIG_INCL_MODALITY = "criteria.inclusion"
ELIG_EXCL_MODALITY = "criteria.exclusion"


class EmbeddingError(Exception):
    pass


class DimMismatch(EmbeddingError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected dim {expected}, got {got}")
        self.expected = expected
        self.got = got


class MissingEmbedding(EmbeddingError):
    def __init__(self, modality: str, text: str):
        super().__init__(f"no cached vector for modality {modality!r}")
        self.modality = modality
        self.text = text


def content_hash(modality: str, text: str) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(modality.encode("utf-8"))
    h.update(b"\x00")
    h.update(text.encode("utf-8"))
    return h.digest()


def stub_encode(modality: str, text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Deterministic surrogate encoder: a seeded PRNG draw, L2-normalized.

    Identical (modality, text) pairs always produce identical vectors, on any
    platform, so the whole pipeline is reproducible without model inference.
    """
    seed = int.from_bytes(
        hashlib.blake2b(f"{modality}\x00{text}".encode("utf-8"), digest_size=8).digest(),
        "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal(dim).astype(np.float32)
    norm = float(np.linalg.norm(v))
    if norm > 0:
        v /= norm
    return v


class StubEncoder:
    name = "stub"
    kind = "stub"

    def __init__(self, output_dim: int = EMBED_DIM):
        self.output_dim = output_dim

    def encode(self, modality: str, text: str) -> np.ndarray:
        return stub_encode(modality, text, self.output_dim)


class CacheBackedEncoder:
    """Looks vectors up in an embedding cache (e.g. one written by the
    offline exporter); misses raise rather than silently degrading."""

    name = "cache"
    kind = "cache_backed"

    def __init__(self, cache: "EmbeddingCache", output_dim: int = EMBED_DIM):
        self.cache = cache
        self.output_dim = output_dim

    def encode(self, modality: str, text: str) -> np.ndarray:
        vec = self.cache.get(modality, text)
        if vec is None:
            raise MissingEmbedding(modality, text)
        return vec


_SENTENCE_SPLIT_RE = re.compile(r"[\n*]+|(?<=[.!?;])\s+")
_INCLUSION_RE = re.compile(r"\b(include[sd]?|including|inclusion|eligible)\b", re.I)
_EXCLUSION_RE = re.compile(r"\b(exclude[sd]?|excluding|exclusion|not\s+eligible|ineligible)\b", re.I)
_HEADER_RE = re.compile(r"^\s*(inclusion|exclusion)\s+criteria\s*:?\s*$", re.I)


def split_eligibility(criteria: str) -> tuple[list[str], list[str]]:
    """Segment criteria text and assign each sentence to the inclusion or
    exclusion group by the nearest preceding trigger phrase. Sentences before
    any trigger default to inclusion; bare group headers are consumed."""
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


def mean_pool(vectors: list[np.ndarray], dim: int = EMBED_DIM) -> np.ndarray:
    """Mean of the group; an empty group pools to the zero vector."""
    if not vectors:
        return np.zeros(dim, dtype=np.float64)
    return np.mean(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]), axis=0)


def eligibility_vector(criteria: str, encoder) -> np.ndarray:
    """Per-sentence encode, group-wise mean pool, concatenate to 1536."""
    incl, excl = split_eligibility(criteria)
    e_incl = mean_pool([encoder.encode(ELIG_INCL_MODALITY, s) for s in incl])
    e_excl = mean_pool([encoder.encode(ELIG_EXCL_MODALITY, s) for s in excl])
    return np.concatenate([e_incl, e_excl])


def project(e: np.ndarray, P: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or e.ndim != 1 or P.shape[1] != e.shape[0]:
        raise DimMismatch(P.shape[1] if P.ndim == 2 else -1, e.shape[0])
    return P @ e


def embed_eligibility(criteria: str, encoder, P_elig: np.ndarray) -> np.ndarray:
    e_elig = eligibility_vector(criteria, encoder)
    return project(e_elig, P_elig)


def truncate_tokens(modality: str, text: str,
                    caps: dict[str, int] | None = None,
                    priority_keywords=PRIORITY_KEYWORDS) -> str:
    """Whitespace-token truncation to the modality cap. Protocol text is cut
    at sentence boundaries, keeping priority-keyword sentences first."""
    caps = caps or TOKEN_CAPS
    cap = caps.get(modality)
    if cap is None:
        return text
    tokens = text.split()
    if len(tokens) <= cap:
        return text
    if modality != "protocol":
        return " ".join(tokens[:cap])

    from .textualize import split_sentences

    sentences = split_sentences(text)

    def priority(sentence: str) -> int:
        low = sentence.lower()
        for rank, kw in enumerate(priority_keywords):
            if kw in low:
                return rank
        return len(priority_keywords)

    ranked = sorted(range(len(sentences)), key=lambda i: (priority(sentences[i]), i))
    kept: set[int] = set()
    budget = cap
    for i in ranked:
        n = len(sentences[i].split())
        if n <= budget:
            kept.add(i)
            budget -= n
    return " ".join(sentences[i] for i in sorted(kept))


def enforce_global_cap(segments: list[tuple[str, str]],
                       global_cap: int = GLOBAL_TOKEN_CAP,
                       caps: dict[str, int] | None = None) -> list[tuple[str, str]]:
    """Apply per-modality caps, then trim from the back of the slot-ordered
    segment list until the record total fits the global cap. Tokens are
    whitespace-delimited, so numeric thresholds are never split mid-token."""
    capped = [(m, truncate_tokens(m, t, caps)) for m, t in segments]
    total = sum(len(t.split()) for _, t in capped)
    if total <= global_cap:
        return capped
    out = list(capped)
    for idx in range(len(out) - 1, -1, -1):
        if total <= global_cap:
            break
        modality, text = out[idx]
        tokens = text.split()
        excess = total - global_cap
        keep = max(0, len(tokens) - excess)
        out[idx] = (modality, " ".join(tokens[:keep]))
        total -= len(tokens) - keep
    return out


@dataclass
class _CacheEntry:
    vector: np.ndarray


class EmbeddingCache:
    """File-backed content-addressed vector store.

    Format: magic "CTOPEMB1", u32 dim, u64 count, then repeated records of
    (16-byte content hash, dim little-endian f32). Fixed-width records allow
    memory-mapped reads.
    """

    HEADER = struct.Struct("<8sIQ")

    def __init__(self, path, dim: int = EMBED_DIM):
        self.path = str(path)
        self.dim = dim
        self._store: dict[bytes, np.ndarray] = {}
        self._dirty = False
        if os.path.exists(self.path):
            self._load()

    def _load(self) -> None:
        with open(self.path, "rb") as fh:
            header = fh.read(self.HEADER.size)
            if len(header) < self.HEADER.size:
                raise IOError(f"truncated cache file {self.path}")
            magic, dim, count = self.HEADER.unpack(header)
            if magic != CACHE_MAGIC:
                raise IOError(f"bad cache magic in {self.path}")
            self.dim = dim
            record = 16 + 4 * dim
            data = fh.read()
        if len(data) != count * record:
            raise IOError(f"cache payload size mismatch in {self.path}")
        for k in range(count):
            off = k * record
            key = data[off:off + 16]
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off + 16).copy()
            self._store[key] = vec

    def put(self, modality: str, text: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise DimMismatch(self.dim, int(np.prod(vector.shape)))
        self._store[content_hash(modality, text)] = vector.copy()
        self._dirty = True

    def get(self, modality: str, text: str) -> np.ndarray | None:
        vec = self._store.get(content_hash(modality, text))
        return None if vec is None else vec.copy()

    def __len__(self):
        return len(self._store)

    def save(self) -> None:
        try:
            with open(self.path, "wb") as fh:
                fh.write(self.HEADER.pack(CACHE_MAGIC, self.dim, len(self._store)))
                for key in sorted(self._store):
                    fh.write(key)
                    fh.write(self._store[key].astype("<f4").tobytes())
        except OSError as exc:
            raise IOError(f"cannot write cache {self.path}: {exc}") from exc
        self._dirty = False

    def close(self) -> None:
        if self._dirty:
            self.save()


def check_cache_file(path) -> dict:
    """Validate the binary format; returns basic stats. Raises IOError on any
    structural problem."""
    cache = EmbeddingCache(path)
    finite = all(np.isfinite(v).all() for v in cache._store.values())
    if not finite:
        raise IOError(f"non-finite vector in cache {path}")
    return {"dim": cache.dim, "count": len(cache)}
