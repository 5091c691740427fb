"""
Metrics: confusion matrices, F1/accuracy, coverage and threshold sweeps.
"""

from metrics.scoring import (
    ABSTAIN_POLICIES,
    EXCLUDE,
    MISS,
    ConfusionMatrix,
    accuracy,
    confusion,
    coverage,
    macro_f1,
    per_class_report,
    summarize,
    weighted_f1,
)
from metrics.sweep import (
    SweepRow,
    best_thresholds,
    coverage_at_matched_f1,
    misclassified_confidence_cdf,
    percentile_grid,
    read_sweep,
    softmax_grid,
    sweep,
    write_sweep,
)
