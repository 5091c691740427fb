"""
Run manifest: seeds, package versions, stage cache keys and artifact hashes.

The manifest is what makes a run directory checkable: validate_manifest
recomputes every recorded artifact hash and, given the stage plan, every
stage key.
"""

import json
import logging
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from utils.errors import DataError
from utils.hashing import file_sha256

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"
MANIFEST_FORMAT = "run-manifest/1"
STATUS_COMPLETE = "complete"
STATUS_FAILED = "failed"

# distribution names as installed
TRACKED_PACKAGES = (
    "numpy",
    "scipy",
    "pandas",
    "scikit-learn",
    "torch",
    "dpkt",
    "matplotlib",
    "python-docx",
    "joblib",
    "tqdm",
)


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def hash_artifacts(run_dir: Path, relative_paths: Sequence[str]) -> Dict[str, str]:
    """relative path -> SHA-256 for every listed file under run_dir."""
    run_dir = Path(run_dir)
    return {rel: file_sha256(run_dir / rel) for rel in sorted(relative_paths)}


def write_manifest(
    run_dir: Path,
    *,
    status: str,
    seed: int,
    config: Dict[str, Any],
    config_path: Optional[str],
    stages: List[Dict[str, Any]],
    failed_stage: Optional[str] = None,
    error: Optional[str] = None,
) -> Path:
    """
    Write run_manifest.json.

    Args:
        run_dir: Run directory.
        status: "complete" or "failed".
        seed: Run seed.
        config: Plain-dict configuration (RunConfig.to_dict()).
        config_path: Config file the run was started from.
        stages: One record per executed stage: name, key, reused and the
            SHA-256 of each of its outputs.
        failed_stage: Name of the stage that raised, if any.
        error: Error message of the failure.

    Returns:
        Path of the manifest.
    """
    artifacts: Dict[str, str] = {}
    for stage in stages:
        artifacts.update(stage.get("outputs", {}))
    manifest = {
        "format": MANIFEST_FORMAT,
        "status": status,
        "failed_stage": failed_stage,
        "error": error,
        "seed": seed,
        "config_path": config_path,
        "config": config,
        "versions": package_versions(),
        "stages": stages,
        "artifacts": dict(sorted(artifacts.items())),
    }
    path = Path(run_dir) / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    logger.info("Wrote %s manifest: %s", status, path)
    return path


def load_manifest(run_dir: Path) -> Dict[str, Any]:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"No run manifest in {run_dir}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed manifest ({e})") from e
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: unsupported manifest format {manifest.get('format')}")
    return manifest


def validate_manifest(run_dir: Path, expected_keys: Optional[Dict[str, str]] = None) -> List[str]:
    """
    Check a run directory against its manifest.

    Args:
        run_dir: Run directory holding run_manifest.json.
        expected_keys: stage name -> freshly computed stage key. Stages that
            appear in both are compared.

    Returns:
        Problems found; an empty list means the run validates. Version
        differences with the current environment are logged, not reported.
    """
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    problems: List[str] = []

    if manifest.get("status") != STATUS_COMPLETE:
        problems.append(f"run status is '{manifest.get('status')}' (failed stage: {manifest.get('failed_stage')})")

    for rel, recorded in sorted(manifest.get("artifacts", {}).items()):
        path = run_dir / rel
        if not path.exists():
            problems.append(f"missing artifact: {rel}")
        elif file_sha256(path) != recorded:
            problems.append(f"hash mismatch: {rel}")

    for stage in manifest.get("stages", []):
        if expected_keys and stage["name"] in expected_keys and expected_keys[stage["name"]] != stage["key"]:
            problems.append(f"stage key mismatch: {stage['name']}")

    current = package_versions()
    for name, version in sorted(manifest.get("versions", {}).items()):
        if current.get(name) != version:
            logger.warning("Run used %s %s; this environment has %s", name, version, current.get(name))

    for problem in problems:
        logger.warning("Manifest check: %s", problem)
    return problems
