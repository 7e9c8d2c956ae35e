import json
import os

from embexport.cache import read_cache
from embexport.encoders import OUTPUT_DIM, LocalEncoder, build_encoder
from embexport.export import (ExportManifest, ManifestError, export,
                              load_manifest, read_jsonl)

import numpy as np
import pytest

GOLDEN = os.path.join(os.path.dirname(__file__), "..", "golden",
                      "processed.jsonl")


def small_input(tmp_path, n=10):
    rows = read_jsonl(GOLDEN)[:n]
    path = tmp_path / "records.jsonl"
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return str(path)


def manifest_for(tmp_path, **kw):
    return ExportManifest(input_path=small_input(tmp_path),
                          cache_path=str(tmp_path / "cache.bin"),
                          allow_download=False, **kw)


def test_local_encoder_deterministic_768():
    a = LocalEncoder("some/model").encode("hello world", 64)
    b = LocalEncoder("some/model").encode("hello world", 64)
    assert a.shape == (OUTPUT_DIM,) and a.dtype == np.float32
    assert np.array_equal(a, b)
    other = LocalEncoder("other/model").encode("hello world", 64)
    assert not np.array_equal(a, other)


def test_build_encoder_falls_back(monkeypatch):
    monkeypatch.setenv("HF_HUB_OFFLINE", "1")
    enc = build_encoder("definitely/not-a-real-model")
    assert enc.kind == "local_fallback"


def test_export_cache_contents(tmp_path):
    manifest = manifest_for(tmp_path)
    count = export(manifest)
    dim, entries = read_cache(manifest.cache_path)
    assert dim == OUTPUT_DIM
    assert count == len(entries) > 0
    for vec in entries.values():
        assert vec.shape == (OUTPUT_DIM,)


def test_export_byte_identical_across_runs(tmp_path):
    manifest = manifest_for(tmp_path)
    export(manifest)
    first = open(manifest.cache_path, "rb").read()
    export(manifest)
    assert open(manifest.cache_path, "rb").read() == first


def test_manifest_guards(tmp_path):
    with pytest.raises(ManifestError):
        manifest_for(tmp_path, dim=512)
    with pytest.raises(ManifestError):
        manifest_for(tmp_path, encoders={"molecular": "x"})
    bad = tmp_path / "m.json"
    bad.write_text(json.dumps({"input_path": "a", "cache_path": "b",
                               "bogus_key": 1}))
    with pytest.raises(ManifestError):
        load_manifest(bad)


def test_load_manifest_merges_defaults(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({
        "input_path": "in.jsonl", "cache_path": "out.bin",
        "encoders": {"molecular": "custom/chem"},
        "allow_download": False,
    }))
    manifest = load_manifest(path)
    assert manifest.encoders["molecular"] == "custom/chem"
    assert manifest.encoders["protocol"] == "medicalai/ClinicalBERT"
