"""
Content hashing for the run manifest and the stage cache.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable


def file_sha256(path: Path) -> str:
    """SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def stage_key(stage: str, params: Any, input_paths: Iterable[Path]) -> str:
    """
    Cache key for a pipeline stage.

    Args:
        stage: Stage name.
        params: JSON-serialisable stage parameters.
        input_paths: Files the stage reads.

    Returns:
        Hex digest over the stage name, its parameters and its inputs' contents.
    """
    digest = hashlib.sha256()
    digest.update(stage.encode("utf-8"))
    digest.update(json.dumps(params, sort_keys=True, default=str).encode("utf-8"))
    for path in input_paths:
        digest.update(file_sha256(Path(path)).encode("ascii"))
    return digest.hexdigest()
