"""
Confusion matrices with abstentions, F1/accuracy and coverage.

Abstained samples never enter the C x C grid; they are tallied per true class.
Under the "miss" policy they count as false negatives of their true class
(never as false positives) and as errors for accuracy. Under "exclude" they
are dropped from F1 and accuracy. Coverage always counts them against.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix as sk_confusion_matrix

from confidence.decisions import Decision
from ingest.records import ABSTAIN
from utils.errors import ConfigurationError, DataError

EXCLUDE = "exclude"
MISS = "miss"
ABSTAIN_POLICIES = (EXCLUDE, MISS)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes, both in `names` order."""

    names: Tuple[str, ...]
    matrix: np.ndarray
    abstain_counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.matrix.sum() + self.abstain_counts.sum())

    def to_dict(self) -> Dict:
        return {
            "classes": list(self.names),
            "matrix": self.matrix.tolist(),
            "abstain": self.abstain_counts.tolist(),
        }


def _predictions(decisions: Sequence) -> List[str]:
    return [d.predicted if isinstance(d, Decision) else str(d) for d in decisions]


def confusion(labels: Sequence[str], decisions: Sequence, class_names: Sequence[str]) -> ConfusionMatrix:
    """
    Tally decisions (Decision objects or predicted names) against true labels.

    Raises:
        DataError: On a label or prediction outside the class set.
    """
    predicted = _predictions(decisions)
    if len(labels) != len(predicted):
        raise DataError(f"{len(labels)} labels for {len(predicted)} decisions")
    names = tuple(class_names)
    index = {name: i for i, name in enumerate(names)}
    bad = sorted({x for x in labels if x not in index} | {p for p in predicted if p != ABSTAIN and p not in index})
    if bad:
        raise DataError(f"Labels outside the class set: {bad}")

    kept = [(t, p) for t, p in zip(labels, predicted) if p != ABSTAIN]
    if kept:
        matrix = sk_confusion_matrix([t for t, _ in kept], [p for _, p in kept], labels=list(names))
    else:
        matrix = np.zeros((len(names), len(names)), dtype=np.int64)
    abstain = np.zeros(len(names), dtype=np.int64)
    for t, p in zip(labels, predicted):
        if p == ABSTAIN:
            abstain[index[t]] += 1
    return ConfusionMatrix(names=names, matrix=matrix.astype(np.int64), abstain_counts=abstain)


def check_policy(policy: str) -> None:
    if policy not in ABSTAIN_POLICIES:
        raise ConfigurationError(f"abstain policy must be one of {ABSTAIN_POLICIES}, got '{policy}'")


def _counts(m: ConfusionMatrix, policy: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    check_policy(policy)
    tp = np.diag(m.matrix).astype(np.float64)
    fp = m.matrix.sum(axis=0) - tp
    fn = m.matrix.sum(axis=1) - tp
    if policy == MISS:
        fn = fn + m.abstain_counts
    return tp, fp, fn


def per_class_f1(m: ConfusionMatrix, policy: str = MISS) -> np.ndarray:
    """F1 per class; a class with 2TP + FP + FN = 0 scores 0."""
    tp, fp, fn = _counts(m, policy)
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(m: ConfusionMatrix, policy: str = MISS) -> float:
    return float(per_class_f1(m, policy).mean()) if len(m.names) else 0.0


def _support(m: ConfusionMatrix, policy: str) -> np.ndarray:
    support = m.matrix.sum(axis=1).astype(np.float64)
    return support + m.abstain_counts if policy == MISS else support


def weighted_f1(m: ConfusionMatrix, policy: str = MISS) -> float:
    """Support-weighted mean of per-class F1; 0 when there is no support."""
    support = _support(m, policy)
    if support.sum() == 0:
        return 0.0
    return float((per_class_f1(m, policy) * support).sum() / support.sum())


def accuracy(m: ConfusionMatrix, policy: str = MISS) -> float:
    check_policy(policy)
    denom = m.matrix.sum() + (m.abstain_counts.sum() if policy == MISS else 0)
    return float(np.trace(m.matrix) / denom) if denom else 0.0


def per_class_report(m: ConfusionMatrix, policy: str = MISS) -> List[Dict]:
    """Precision, recall, F1 and support per class."""
    tp, fp, fn = _counts(m, policy)
    precision = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp + fp) > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros_like(tp), where=(tp + fn) > 0)
    f1 = per_class_f1(m, policy)
    support = _support(m, policy)
    return [
        {
            "class": name,
            "precision": float(precision[i]),
            "recall": float(recall[i]),
            "f1": float(f1[i]),
            "support": int(support[i]),
            "abstained": int(m.abstain_counts[i]),
        }
        for i, name in enumerate(m.names)
    ]


def coverage(labels: Sequence[str], decisions: Sequence, background_label: Optional[str]) -> Tuple[float, float]:
    """
    (overall, relevant) coverage: correct non-abstained samples over all
    samples, and the same restricted to samples whose true label is not
    `background_label`. An empty denominator gives 0.0.
    """
    predicted = _predictions(decisions)
    if len(labels) != len(predicted):
        raise DataError(f"{len(labels)} labels for {len(predicted)} decisions")
    correct = [p != ABSTAIN and p == t for t, p in zip(labels, predicted)]
    overall = sum(correct) / len(correct) if correct else 0.0
    relevant = [c for c, t in zip(correct, labels) if t != background_label]
    relevant_coverage = sum(relevant) / len(relevant) if relevant else 0.0
    return float(overall), float(relevant_coverage)


def abstain_rate(decisions: Sequence) -> float:
    predicted = _predictions(decisions)
    return sum(p == ABSTAIN for p in predicted) / len(predicted) if predicted else 0.0


def summarize(
    labels: Sequence[str],
    decisions: Sequence,
    class_names: Sequence[str],
    background_label: Optional[str],
) -> Dict:
    """Every headline metric under both abstain policies, plus the matrix."""
    m = confusion(labels, decisions, class_names)
    overall, relevant = coverage(labels, decisions, background_label)
    summary = {
        "samples": m.total,
        "abstain_rate": abstain_rate(decisions),
        "overall_coverage": overall,
        "relevant_coverage": relevant,
        "default_policy": EXCLUDE,
        "confusion": m.to_dict(),
    }
    for policy in ABSTAIN_POLICIES:
        summary[policy] = {
            "macro_f1": macro_f1(m, policy),
            "weighted_f1": weighted_f1(m, policy),
            "accuracy": accuracy(m, policy),
            "per_class": per_class_report(m, policy),
        }
    return summary
