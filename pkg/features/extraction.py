"""
Fixed-shape flow features.

Time series: the first 40 packets as (arrival time relative to the flow
start, packet size), sizes negated for server-to-client packets, zero rows as
padding. Size sequence: the first 256 packet sizes, zero padded.
"""

import logging
from typing import Sequence

import numpy as np

from features.feature_set import (
    ORIGINAL,
    SIZESEQ,
    SIZESEQ_SHAPE,
    TIMESERIES,
    TIMESERIES_SHAPE,
    FeatureSet,
)
from ingest.records import Direction, Flow
from utils.errors import DataError

logger = logging.getLogger(__name__)

TIMESERIES_LENGTH = TIMESERIES_SHAPE[0]
SIZESEQ_LENGTH = SIZESEQ_SHAPE[0]


def packet_rows(flow: Flow, start: int, stop: int) -> np.ndarray:
    """(relative time, direction-signed size) rows for packets[start:stop]."""
    rows = [
        (p.relative_time, -p.size if p.direction == Direction.SERVER_TO_CLIENT else p.size)
        for p in flow.packets[start:stop]
    ]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


def extract_timeseries(flow: Flow, length: int = TIMESERIES_LENGTH) -> np.ndarray:
    """
    40x2 time-series feature of a flow.

    Flows shorter than `length` (imported data) are zero padded.
    """
    feature = np.zeros((length, 2), dtype=np.float64)
    rows = packet_rows(flow, 0, length)
    feature[: len(rows)] = rows
    return feature


def extract_size_sequence(flow: Flow, length: int = SIZESEQ_LENGTH) -> np.ndarray:
    """Unsigned packet sizes of the first `length` packets, zero padded."""
    feature = np.zeros(length, dtype=np.float64)
    sizes = [p.size for p in flow.packets[:length]]
    feature[: len(sizes)] = sizes
    return feature


def featurize(flows: Sequence[Flow], kind: str = TIMESERIES) -> FeatureSet:
    """
    Extract features for labeled flows.

    Raises:
        DataError: If a flow is unlabeled.
    """
    unlabeled = [f.flow_id for f in flows if f.label is None]
    if unlabeled:
        raise DataError(f"{len(unlabeled)} flow(s) are unlabeled, e.g. {unlabeled[0]}")

    if kind == TIMESERIES:
        shape = TIMESERIES_SHAPE
        values = np.stack([extract_timeseries(f) for f in flows]) if flows else np.zeros((0,) + shape)
    elif kind == SIZESEQ:
        shape = SIZESEQ_SHAPE
        values = np.stack([extract_size_sequence(f) for f in flows]) if flows else np.zeros((0,) + shape)
    else:
        raise DataError(f"Unknown feature kind: {kind}")

    logger.info("Extracted %d %s features", len(flows), kind)
    return FeatureSet(
        kind=kind,
        values=values,
        labels=[f.label for f in flows],
        session_ids=[f.session_id for f in flows],
        flow_ids=[f.flow_id for f in flows],
        origins=[ORIGINAL] * len(flows),
    )
