"""
Class balancing: translation augmentation for time series, resampling with
replacement for size sequences. Originals are always kept.
"""

import logging
from typing import Mapping, Optional

import numpy as np

from features.augmentation import DEFAULT_MAX_SHIFT, augment_translate, random_spec
from features.feature_set import (
    AUGMENTED,
    OVERSAMPLED,
    TIMESERIES,
    FeatureSet,
    concat_feature_sets,
)
from ingest.records import Flow
from utils.errors import ConfigurationError, EmptyClassError

logger = logging.getLogger(__name__)

AUGMENT = "augment"
OVERSAMPLE = "oversample"
STRATEGIES = (AUGMENT, OVERSAMPLE)


def balance(
    dataset: FeatureSet,
    strategy: str,
    target_count: Optional[int] = None,
    rng_seed: int = 0,
    flows: Optional[Mapping[str, Flow]] = None,
    class_names=None,
    max_shift: int = DEFAULT_MAX_SHIFT,
) -> FeatureSet:
    """
    Bring every class to exactly `target_count` samples.

    Args:
        dataset: Labeled features.
        strategy: "augment" (time series only) or "oversample".
        target_count: Samples per class; defaults to the largest class.
        rng_seed: Seed of the generator that picks sources and shifts.
        flows: flow_id -> Flow, used to fill left-shift tails.
        class_names: Classes that must be present. Defaults to the labels seen.
        max_shift: Upper bound for the shift length n.

    Returns:
        The originals followed by the generated samples, class by class.

    Raises:
        EmptyClassError: If a required class has no samples.
        ConfigurationError: On an unknown strategy or a target below an
            existing class count.
    """
    if strategy not in STRATEGIES:
        raise ConfigurationError(f"Unknown balance strategy '{strategy}'; expected one of {STRATEGIES}")
    if strategy == AUGMENT and dataset.kind != TIMESERIES:
        raise ConfigurationError("Translation augmentation applies to time-series features only")

    counts = dataset.class_counts()
    names = list(class_names) if class_names is not None else sorted(counts)
    for name in names:
        if counts.get(name, 0) == 0:
            raise EmptyClassError(name)

    largest = max(counts.values())
    target = largest if target_count is None else int(target_count)
    if target < largest:
        too_big = sorted(name for name, c in counts.items() if c > target)
        raise ConfigurationError(
            f"target_count {target} is below the size of class(es) {too_big}; originals are never removed"
        )

    rng = np.random.default_rng(rng_seed)
    flows = flows or {}
    parts = [dataset]
    for name in names:
        members = [i for i, label in enumerate(dataset.labels) if label == name]
        deficit = target - len(members)
        if deficit == 0:
            continue
        sources = rng.choice(members, size=deficit, replace=True)
        if strategy == OVERSAMPLE:
            extra = dataset.subset(sources)
            parts.append(
                FeatureSet(
                    kind=extra.kind,
                    values=extra.values,
                    labels=extra.labels,
                    session_ids=extra.session_ids,
                    flow_ids=extra.flow_ids,
                    origins=[OVERSAMPLED] * deficit,
                )
            )
        else:
            values = np.stack(
                [
                    augment_translate(
                        dataset.values[i],
                        flows.get(dataset.flow_ids[i]),
                        random_spec(rng, max_shift),
                    )
                    for i in sources
                ]
            )
            parts.append(
                FeatureSet(
                    kind=dataset.kind,
                    values=values,
                    labels=[name] * deficit,
                    session_ids=[dataset.session_ids[i] for i in sources],
                    flow_ids=[dataset.flow_ids[i] for i in sources],
                    origins=[AUGMENTED] * deficit,
                )
            )
        logger.debug("Class %s: %d originals, %d generated", name, len(members), deficit)

    if counts.keys() - set(names):
        logger.warning("Samples of classes outside the class set are passed through: %s", sorted(counts.keys() - set(names)))

    balanced = concat_feature_sets(parts)
    logger.info("Balanced %d samples to %d (%s, %d per class)", len(dataset), len(balanced), strategy, target)
    return balanced
