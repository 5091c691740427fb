"""
FeatureSet: a batch of fixed-shape flow features with their labels, and its
CSV persistence (one sample per line, flattened values).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from utils.errors import DataError

TIMESERIES = "timeseries"
SIZESEQ = "sizeseq"

TIMESERIES_SHAPE = (40, 2)
SIZESEQ_SHAPE = (256,)

ORIGINAL = "original"
AUGMENTED = "augmented"
OVERSAMPLED = "oversampled"

_SHAPES = {TIMESERIES: TIMESERIES_SHAPE, SIZESEQ: SIZESEQ_SHAPE}
_META_COLUMNS = ["label", "session_id", "flow_id", "origin"]


@dataclass(frozen=True)
class FeatureSet:
    """
    Labeled features.

    values has shape (N, 40, 2) for time series and (N, 256) for size sequences.
    flow_ids link each sample back to its source flow (augmented samples keep
    the id of the flow they were derived from).
    """

    kind: str
    values: np.ndarray
    labels: Sequence[str]
    session_ids: Sequence[str]
    flow_ids: Sequence[str]
    origins: Sequence[str]

    def __post_init__(self):
        if self.kind not in _SHAPES:
            raise DataError(f"Unknown feature kind: {self.kind}")
        n = len(self.values)
        if self.values.shape[1:] != _SHAPES[self.kind]:
            raise DataError(
                f"{self.kind} features must have shape (N, {_SHAPES[self.kind]}), got {self.values.shape}"
            )
        for name in ("labels", "session_ids", "flow_ids", "origins"):
            if len(getattr(self, name)) != n:
                raise DataError(f"FeatureSet.{name} has {len(getattr(self, name))} entries for {n} samples")

    def __len__(self) -> int:
        return len(self.values)

    def class_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for label in self.labels:
            counts[label] = counts.get(label, 0) + 1
        return counts

    def subset(self, indices: Sequence[int]) -> "FeatureSet":
        indices = list(indices)
        return FeatureSet(
            kind=self.kind,
            values=self.values[indices],
            labels=[self.labels[i] for i in indices],
            session_ids=[self.session_ids[i] for i in indices],
            flow_ids=[self.flow_ids[i] for i in indices],
            origins=[self.origins[i] for i in indices],
        )


def concat_feature_sets(parts: List[FeatureSet]) -> FeatureSet:
    kinds = {p.kind for p in parts}
    if len(kinds) != 1:
        raise DataError(f"Cannot concatenate feature sets of kinds {sorted(kinds)}")
    return FeatureSet(
        kind=parts[0].kind,
        values=np.concatenate([p.values for p in parts]),
        labels=[x for p in parts for x in p.labels],
        session_ids=[x for p in parts for x in p.session_ids],
        flow_ids=[x for p in parts for x in p.flow_ids],
        origins=[x for p in parts for x in p.origins],
    )


def write_features(path: Path, features: FeatureSet) -> None:
    """Write features as CSV: f0..fD-1 flattened values then the metadata columns."""
    flat = features.values.reshape(len(features), -1)
    frame = pd.DataFrame(flat, columns=[f"f{i}" for i in range(flat.shape[1])])
    frame["label"] = list(features.labels)
    frame["session_id"] = list(features.session_ids)
    frame["flow_id"] = list(features.flow_ids)
    frame["origin"] = list(features.origins)
    frame.to_csv(path, index=False, float_format="%.9g")


def read_features(path: Path) -> FeatureSet:
    """Read a feature CSV; the kind follows from the number of value columns."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Feature file not found: {path}")
    frame = pd.read_csv(path, dtype={c: str for c in _META_COLUMNS}, keep_default_na=False)
    missing = [c for c in _META_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}")
    value_columns = [c for c in frame.columns if c not in _META_COLUMNS]
    width = len(value_columns)
    if width == TIMESERIES_SHAPE[0] * TIMESERIES_SHAPE[1]:
        kind = TIMESERIES
    elif width == SIZESEQ_SHAPE[0]:
        kind = SIZESEQ
    else:
        raise DataError(f"{path}: {width} value columns match no feature kind")
    try:
        values = frame[value_columns].to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DataError(f"{path}: non-numeric feature value ({e})") from e
    if not np.isfinite(values).all():
        raise DataError(f"{path}: non-finite feature values")
    return FeatureSet(
        kind=kind,
        values=values.reshape((len(frame),) + _SHAPES[kind]),
        labels=frame["label"].tolist(),
        session_ids=frame["session_id"].tolist(),
        flow_ids=frame["flow_id"].tolist(),
        origins=frame["origin"].tolist(),
    )
