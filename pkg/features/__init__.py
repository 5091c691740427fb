"""
Features: fixed-shape flow representations and class balancing.
"""

from features.augmentation import AugmentationSpec, ShiftDirection, augment_translate, random_spec
from features.balancing import AUGMENT, OVERSAMPLE, balance
from features.extraction import extract_size_sequence, extract_timeseries, featurize
from features.feature_set import (
    SIZESEQ,
    TIMESERIES,
    FeatureSet,
    concat_feature_sets,
    read_features,
    write_features,
)
