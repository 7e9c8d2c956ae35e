"""Contract test against the consumer: the exported cache must pass the
consumer's format checker and drive its eval subcommand unmodified. The
consumer is exercised only through its CLI; nothing from it is imported."""
import json
import os
import shutil
import subprocess

import pytest

GOLDEN = os.path.join(os.path.dirname(__file__), "..", "golden",
                      "processed.jsonl")

pytestmark = pytest.mark.skipif(shutil.which("trialfuse") is None,
                                reason="consumer CLI not installed")


def run(*argv, check=True):
    result = subprocess.run(argv, capture_output=True, text=True)
    if check and result.returncode != 0:
        raise AssertionError(f"{argv} failed:\n{result.stdout}\n{result.stderr}")
    return result


def test_exporter_cache_drives_consumer_eval(tmp_path):
    cache = str(tmp_path / "cache.bin")
    manifest_path = tmp_path / "manifest.json"
    manifest_path.write_text(json.dumps({
        "input_path": GOLDEN,
        "cache_path": cache,
        "allow_download": False,
    }))
    run("embexport", "export", "--manifest", str(manifest_path))

    checked = run("trialfuse", "check-cache", "--cache", cache)
    assert "dim 768" in checked.stdout

    train_dir = str(tmp_path / "train")
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"epochs": 2}))
    run("trialfuse", "train", "--input", GOLDEN, "--out-dir", train_dir,
        "--config", str(config))

    report = str(tmp_path / "report.json")
    run("trialfuse", "eval", "--model", os.path.join(train_dir, "run.ckpt"),
        "--input", GOLDEN, "--cache", cache, "--report", report,
        "--config", str(config))
    payload = json.load(open(report))
    assert 0.0 <= payload["metrics"]["auc"] <= 1.0
