"""
Environment fingerprint stamped on every omnifuse artifact.

The calibration bundle, the run report and the metrics file each embed the
same two keys, ``environment`` and ``environment_hash``, so a fitted
calibration or a reported MPJPE can be traced to the interpreter, platform
and numpy/scipy versions that produced it. Two artifacts with equal hashes
came from numerically identical stacks.
"""

import hashlib
import os
import platform
import sys
from typing import Any, Dict

from omnifuse.records import canonical_json


def compute_object_hash(obj: Any) -> str:
    """
    sha256 of ``obj`` in canonical JSON, the same encoding the artifacts are written in.

    Key order does not affect the digest, so the environment hash of a bundle
    re-read from disk matches the one computed at write time.
    """
    canonical = canonical_json(obj)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def collect_environment_metadata() -> Dict[str, Any]:
    """
    Collect runtime environment metadata relevant to fusion numerics and timing.
    """
    env: Dict[str, Any] = {}

    # Python + OS
    env["python_version"] = sys.version
    env["platform"] = platform.platform()
    env["cpu_count"] = os.cpu_count()

    # numerical stack
    try:
        import numpy

        env["numpy_version"] = numpy.__version__
    except ImportError:
        env["numpy_version"] = None

    try:
        import scipy

        env["scipy_version"] = scipy.__version__
    except ImportError:
        env["scipy_version"] = None

    try:
        from importlib.metadata import PackageNotFoundError, version

        env["omnifuse_version"] = version("omnifuse")
    except PackageNotFoundError:
        env["omnifuse_version"] = None

    return env


def generate_environment_fingerprint() -> Dict[str, Any]:
    """
    The ``environment`` / ``environment_hash`` pair merged into artifacts.

    ``calibrate`` adds it to ``calibration_bundle.json``, ``run`` stores it on
    the RunReport written as ``run_report.json``, and ``evaluate`` adds it to
    the metrics file. Comparing the hashes across artifacts tells whether a
    calibration was fitted on the stack that later replayed it.
    """
    metadata = collect_environment_metadata()
    environment_hash = compute_object_hash(metadata)

    return {
        "environment": metadata,
        "environment_hash": environment_hash,
    }
