"""
Session-level train/test split. A session never contributes flows to both sets.
"""

import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from ingest.records import Flow
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

TRAIN = "train"
TEST = "test"


def split_sessions(
    flows: Sequence[Flow],
    assignment: Mapping[str, str],
) -> Tuple[List[Flow], List[Flow]]:
    """
    Split flows into train and test sets by session.

    Args:
        flows: Flows to split.
        assignment: session_id -> "train" | "test".

    Returns:
        (train flows, test flows), each in input order.

    Raises:
        ConfigurationError: If a flow's session is missing from the assignment
            or assigned to anything other than train/test.
    """
    train, test = [], []
    for flow in flows:
        side = assignment.get(flow.session_id)
        if side == TRAIN:
            train.append(flow)
        elif side == TEST:
            test.append(flow)
        elif side is None:
            raise ConfigurationError(f"Session '{flow.session_id}' is not in the train/test assignment")
        else:
            raise ConfigurationError(f"Session '{flow.session_id}' has invalid assignment '{side}'")

    if not test:
        logger.warning("Session split produced an empty test set (%d train flows)", len(train))
    if not train:
        logger.warning("Session split produced an empty train set (%d test flows)", len(test))
    return train, test


def make_session_assignment(
    flows: Sequence[Flow],
    test_fraction: float = 0.3,
    seed: int = 0,
) -> Dict[str, str]:
    """
    Assign whole sessions to train or test, stratified by session type.

    Every session type keeps at least one training session; types with two or
    more sessions get at least one test session.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must lie in (0, 1)")

    sessions_by_type: Dict[str, List[str]] = defaultdict(list)
    for flow in flows:
        group = flow.session_type or ""
        if flow.session_id not in sessions_by_type[group]:
            sessions_by_type[group].append(flow.session_id)

    rng = np.random.default_rng(seed)
    assignment: Dict[str, str] = {}
    for group in sorted(sessions_by_type):
        sessions = sorted(sessions_by_type[group])
        order = rng.permutation(len(sessions))
        n_test = int(round(test_fraction * len(sessions)))
        n_test = min(max(n_test, 1 if len(sessions) > 1 else 0), len(sessions) - 1)
        test_ids = {sessions[i] for i in order[:n_test]}
        for session in sessions:
            assignment[session] = TEST if session in test_ids else TRAIN
    return assignment


def save_assignment(path: Path, assignment: Mapping[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dict(sorted(assignment.items())), f, indent=2)


def load_assignment(path: Path) -> Dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Session assignment file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        assignment = json.load(f)
    if not isinstance(assignment, dict):
        raise ConfigurationError(f"{path}: expected a JSON object mapping session ids to train/test")
    return {str(k): str(v) for k, v in assignment.items()}
