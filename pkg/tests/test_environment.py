"""
tests/test_environment.py

Tests for the environment fingerprint embedded in calibration bundles, run
reports and metrics files.

Run with:
    pytest tests/test_environment.py -v
"""

from omnifuse.environment import (
    collect_environment_metadata,
    compute_object_hash,
    generate_environment_fingerprint,
)
from omnifuse.pipeline import RunReport

# --------------- compute_object_hash ------------------------------------


def test_hash_is_key_order_independent():
    assert compute_object_hash({"a": 1, "b": [1, 2]}) == compute_object_hash({"b": [1, 2], "a": 1})


def test_hash_changes_with_value():
    assert compute_object_hash({"seed": 1}) != compute_object_hash({"seed": 2})


# --------------- generate_environment_fingerprint ------------------------------------


def test_fingerprint_fields():
    result = generate_environment_fingerprint()
    env = result["environment"]
    for key in ("python_version", "platform", "cpu_count", "numpy_version", "scipy_version",
                "omnifuse_version"):
        assert key in env, f"Missing field: {key}"
    assert env["numpy_version"] is not None


def test_fingerprint_hash_is_sha256_of_metadata():
    result = generate_environment_fingerprint()
    hash_val = result["environment_hash"]
    assert len(hash_val) == 64
    assert all(c in "0123456789abcdef" for c in hash_val)
    assert hash_val == compute_object_hash(collect_environment_metadata())


def test_fingerprint_is_stable_across_calls():
    assert generate_environment_fingerprint() == generate_environment_fingerprint()


def test_fingerprint_embedded_in_run_report():
    report = RunReport()
    report.environment = generate_environment_fingerprint()
    data = report.to_dict()
    assert data["environment_hash"] == report.environment["environment_hash"]
    assert data["frames_processed"] == 0
    assert data["latency_p50_us"] is None
