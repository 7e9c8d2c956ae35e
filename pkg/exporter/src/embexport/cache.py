"""Writer (and test reader) for the CTOPEMB1 embedding cache format.

Layout: magic ``CTOPEMB1``, u32 vector dimension, u64 record count, then
fixed-width records of (16-byte blake2b content hash, dim little-endian f32).
The content hash covers ``modality`` and ``text`` separated by a NUL byte, so
consumers can look vectors up without storing the original strings.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

CACHE_MAGIC = b"CTOPEMB1"
HEADER = struct.Struct("<8sIQ")


class CacheFormatError(IOError):
    pass


def content_hash(modality: str, text: str) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(modality.encode("utf-8"))
    h.update(b"\x00")
    h.update(text.encode("utf-8"))
    return h.digest()


def write_cache(path, dim: int, entries: dict[bytes, np.ndarray]) -> None:
    """Write all entries in dict insertion order; single shot, no appends."""
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(CACHE_MAGIC, dim, len(entries)))
        for digest, vector in entries.items():
            vector = np.asarray(vector, dtype="<f4")
            if vector.shape != (dim,):
                raise CacheFormatError(
                    f"vector shape {vector.shape} does not match dim {dim}")
            fh.write(digest)
            fh.write(vector.tobytes())


def read_cache(path) -> tuple[int, dict[bytes, np.ndarray]]:
    with open(path, "rb") as fh:
        header = fh.read(HEADER.size)
        if len(header) != HEADER.size:
            raise CacheFormatError("truncated header")
        magic, dim, count = HEADER.unpack(header)
        if magic != CACHE_MAGIC:
            raise CacheFormatError(f"bad magic {magic!r}")
        record = struct.Struct(f"<16s{dim}f")
        entries: dict[bytes, np.ndarray] = {}
        for _ in range(count):
            blob = fh.read(record.size)
            if len(blob) != record.size:
                raise CacheFormatError("truncated record")
            digest = blob[:16]
            entries[digest] = np.frombuffer(blob[16:], dtype="<f4")
        if fh.read(1):
            raise CacheFormatError("trailing bytes after final record")
    return dim, entries
