import hashlib
import struct

import numpy as np
import pytest

from embexport.cache import (CACHE_MAGIC, CacheFormatError, content_hash,
                             read_cache, write_cache)


def test_content_hash_contract():
    expected = hashlib.blake2b(b"protocol\x00hello", digest_size=16).digest()
    assert content_hash("protocol", "hello") == expected


def test_roundtrip(tmp_path):
    path = tmp_path / "cache.bin"
    vec = np.arange(4, dtype=np.float32)
    entries = {content_hash("protocol", "a"): vec,
               content_hash("molecular", "CCO"): vec * 2}
    write_cache(path, 4, entries)
    dim, loaded = read_cache(path)
    assert dim == 4
    assert set(loaded) == set(entries)
    assert np.array_equal(loaded[content_hash("protocol", "a")], vec)


def test_header_layout(tmp_path):
    path = tmp_path / "cache.bin"
    write_cache(path, 3, {b"x" * 16: np.zeros(3, dtype=np.float32)})
    blob = path.read_bytes()
    magic, dim, count = struct.unpack("<8sIQ", blob[:20])
    assert magic == CACHE_MAGIC and dim == 3 and count == 1
    assert len(blob) == 20 + 16 + 3 * 4


def test_reader_rejects_bad_magic(tmp_path):
    path = tmp_path / "cache.bin"
    write_cache(path, 2, {})
    path.write_bytes(b"WRONGMAG" + path.read_bytes()[8:])
    with pytest.raises(CacheFormatError):
        read_cache(path)


def test_writer_rejects_wrong_dim(tmp_path):
    with pytest.raises(CacheFormatError):
        write_cache(tmp_path / "c.bin", 4,
                    {b"y" * 16: np.zeros(3, dtype=np.float32)})
