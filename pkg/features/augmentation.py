"""
Translation augmentation of time-series features.

A subsequence starting at `start_index` is shifted by n steps. Rows before the
start are kept. A left shift pulls the rows after the start toward it and
fills the n trailing slots with the flow's next packets (41..40+n), or zeros
when the flow has none. A right shift pushes the rows toward the end, dropping
the last n, and fills the n vacated slots with copies of the start row, times
included, so the time column may repeat.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from features.extraction import TIMESERIES_LENGTH, packet_rows
from features.feature_set import TIMESERIES_SHAPE
from ingest.records import Flow
from utils.errors import ConfigurationError, DataError

DEFAULT_MAX_SHIFT = 10


class ShiftDirection(str, Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class AugmentationSpec:
    """
    One translation: shift `shift_steps` rows in `direction`.

    start_index is the first row of the shifted subsequence; when None, it is
    drawn from a generator seeded with `rng_seed`.
    """

    shift_steps: int
    direction: ShiftDirection
    rng_seed: int = 0
    start_index: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.shift_steps < TIMESERIES_LENGTH:
            raise ConfigurationError(
                f"shift_steps must lie in [1, {TIMESERIES_LENGTH - 1}], got {self.shift_steps}"
            )
        object.__setattr__(self, "direction", ShiftDirection(self.direction))
        if self.start_index is not None and not 0 <= self.start_index <= TIMESERIES_LENGTH - self.shift_steps:
            raise ConfigurationError(
                f"start_index must lie in [0, {TIMESERIES_LENGTH - self.shift_steps}], got {self.start_index}"
            )

    def resolve_start(self) -> int:
        if self.start_index is not None:
            return self.start_index
        rng = np.random.default_rng(self.rng_seed)
        return int(rng.integers(0, TIMESERIES_LENGTH - self.shift_steps))


def random_spec(rng: np.random.Generator, max_shift: int = DEFAULT_MAX_SHIFT) -> AugmentationSpec:
    """Draw n uniformly from [1, max_shift], a direction and a start index."""
    if not 1 <= max_shift < TIMESERIES_LENGTH:
        raise ConfigurationError(f"max_shift must lie in [1, {TIMESERIES_LENGTH - 1}], got {max_shift}")
    n = int(rng.integers(1, max_shift + 1))
    direction = ShiftDirection.LEFT if rng.random() < 0.5 else ShiftDirection.RIGHT
    start = int(rng.integers(0, TIMESERIES_LENGTH - n))
    return AugmentationSpec(shift_steps=n, direction=direction, start_index=start)


def augment_translate(
    feature: np.ndarray,
    source_flow: Optional[Flow],
    spec: AugmentationSpec,
) -> np.ndarray:
    """
    Shift a 40x2 time-series feature.

    Args:
        feature: Feature of `source_flow` (as produced by extract_timeseries).
        source_flow: Flow the feature came from; supplies the packets past the
            40th for left shifts. None fills those slots with zeros.
        spec: Shift to apply.

    Returns:
        A new 40x2 array.
    """
    if feature.shape != TIMESERIES_SHAPE:
        raise DataError(f"Time-series feature must be {TIMESERIES_SHAPE}, got {feature.shape}")
    length = TIMESERIES_LENGTH
    n = spec.shift_steps
    s = spec.resolve_start()
    out = np.zeros_like(feature)
    out[:s] = feature[:s]

    if spec.direction == ShiftDirection.RIGHT:
        out[s : s + n] = feature[s]
        out[s + n :] = feature[s : length - n]
    else:
        out[s : length - n] = feature[s + n :]
        if source_flow is not None:
            extra = packet_rows(source_flow, length, length + n)
            out[length - n : length - n + len(extra)] = extra
    return out
