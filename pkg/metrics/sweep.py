"""
Threshold sweeps and the F1-versus-coverage comparison between pipelines.
"""

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from confidence.decisions import Decision
from ingest.records import ABSTAIN
from metrics.scoring import (
    EXCLUDE,
    MISS,
    abstain_rate,
    accuracy,
    confusion,
    coverage,
    macro_f1,
    weighted_f1,
    check_policy,
)
from utils.errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepRow:
    """
    Metrics at one threshold. macro_f1/accuracy/weighted_f1 follow `policy`;
    the *_miss and *_exclude columns carry both variants.
    """

    threshold: float
    macro_f1: float
    accuracy: float
    weighted_f1: float
    overall_coverage: float
    relevant_coverage: float
    abstain_rate: float
    macro_f1_exclude: float
    macro_f1_miss: float
    accuracy_exclude: float
    accuracy_miss: float
    weighted_f1_exclude: float
    weighted_f1_miss: float
    policy: str = EXCLUDE


def softmax_grid() -> List[float]:
    """0.40 to 0.95 in steps of 0.05, plus 0.99."""
    return [round(0.40 + 0.05 * i, 2) for i in range(12)] + [0.99]


def percentile_grid(stop: float = 10.0, step: float = 0.5) -> List[float]:
    """0 to `stop` percent in steps of `step`."""
    count = int(round(stop / step))
    return [round(step * i, 6) for i in range(count + 1)]


def score_row(
    threshold: float,
    labels: Sequence[str],
    decisions: Sequence[Decision],
    class_names: Sequence[str],
    background_label: Optional[str],
    policy: str = EXCLUDE,
) -> SweepRow:
    check_policy(policy)
    m = confusion(labels, decisions, class_names)
    overall, relevant = coverage(labels, decisions, background_label)
    variants = {
        p: (macro_f1(m, p), accuracy(m, p), weighted_f1(m, p)) for p in (EXCLUDE, MISS)
    }
    headline = variants[policy]
    return SweepRow(
        threshold=float(threshold),
        macro_f1=headline[0],
        accuracy=headline[1],
        weighted_f1=headline[2],
        overall_coverage=overall,
        relevant_coverage=relevant,
        abstain_rate=abstain_rate(decisions),
        macro_f1_exclude=variants[EXCLUDE][0],
        macro_f1_miss=variants[MISS][0],
        accuracy_exclude=variants[EXCLUDE][1],
        accuracy_miss=variants[MISS][1],
        weighted_f1_exclude=variants[EXCLUDE][2],
        weighted_f1_miss=variants[MISS][2],
        policy=policy,
    )


def sweep(
    evaluate: Callable[[float], Sequence[Decision]],
    grid: Sequence[float],
    labels: Sequence[str],
    class_names: Sequence[str],
    background_label: Optional[str],
    policy: str = EXCLUDE,
) -> List[SweepRow]:
    """
    One row per threshold in `grid`.

    Args:
        evaluate: threshold -> decisions for the samples behind `labels`.
        grid: Thresholds, in sweep order.
        labels: True labels.
        class_names: Class order.
        background_label: Class excluded from relevant coverage.
        policy: Abstain policy of the headline columns.
    """
    if not grid:
        raise ConfigurationError("Sweep grid must not be empty")
    rows = [score_row(t, labels, evaluate(t), class_names, background_label, policy) for t in grid]
    logger.info("Swept %d thresholds over %d samples", len(rows), len(labels))
    return rows


def best_thresholds(rows: Sequence[SweepRow], min_macro_f1: float) -> List[SweepRow]:
    """Rows reaching `min_macro_f1`, best relevant then overall coverage first."""
    qualifying = [r for r in rows if r.macro_f1 >= min_macro_f1]
    return sorted(qualifying, key=lambda r: (-r.relevant_coverage, -r.overall_coverage, r.threshold))


def coverage_at_matched_f1(primary_rows: Sequence[SweepRow], baseline_rows: Sequence[SweepRow]) -> List[Dict]:
    """
    For every baseline row, the best coverages the primary pipeline reaches at
    a macro F1 at least as high. Primary fields are None when no row qualifies.
    """
    comparison = []
    for base in baseline_rows:
        matched = [r for r in primary_rows if r.macro_f1 >= base.macro_f1]
        best_relevant = max(matched, key=lambda r: (r.relevant_coverage, r.overall_coverage), default=None)
        best_overall = max(matched, key=lambda r: (r.overall_coverage, r.relevant_coverage), default=None)
        comparison.append(
            {
                "baseline_threshold": base.threshold,
                "baseline_macro_f1": base.macro_f1,
                "baseline_overall_coverage": base.overall_coverage,
                "baseline_relevant_coverage": base.relevant_coverage,
                "primary_threshold": best_relevant.threshold if best_relevant else None,
                "primary_macro_f1": best_relevant.macro_f1 if best_relevant else None,
                "primary_relevant_coverage": best_relevant.relevant_coverage if best_relevant else None,
                "primary_overall_coverage": best_overall.overall_coverage if best_overall else None,
            }
        )
    return comparison


def misclassified_confidence_cdf(
    labels: Sequence[str], decisions: Sequence[Decision]
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Empirical CDF of the confidence score over misclassified, non-abstained
    samples: (sorted scores, fraction of errors with score <= each).
    """
    if len(labels) != len(decisions):
        raise DataError(f"{len(labels)} labels for {len(decisions)} decisions")
    scores = np.sort(
        [d.score for t, d in zip(labels, decisions) if d.predicted != ABSTAIN and d.predicted != t]
    )
    if len(scores) == 0:
        return scores, scores
    return scores, np.arange(1, len(scores) + 1) / len(scores)


def sweep_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows], columns=[f.name for f in fields(SweepRow)])


def write_sweep(path: Path, rows: Sequence[SweepRow]) -> None:
    sweep_frame(rows).to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def read_sweep(path: Path) -> List[SweepRow]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Sweep file not found: {path}")
    frame = pd.read_csv(path)
    missing = [f.name for f in fields(SweepRow) if f.name not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}")
    names = [f.name for f in fields(SweepRow)]
    return [SweepRow(**{k: record[k] for k in names}) for record in frame.to_dict(orient="records")]
