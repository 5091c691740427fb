"""
Majority labeling of GMM clusters and the per-cluster composition report.
"""

import logging
from collections import Counter
from dataclasses import replace
from typing import Any, Dict, List, Sequence

import numpy as np

from confidence.gmm import GmmModel, posterior
from utils.errors import DataError

logger = logging.getLogger(__name__)


def hard_assignments(model: GmmModel, vectors: np.ndarray) -> np.ndarray:
    """argmax_k posterior for every row."""
    return posterior(model, vectors).argmax(axis=1)


def assign_cluster_labels(
    model: GmmModel,
    train_vectors: np.ndarray,
    labels: Sequence[str],
    class_names: Sequence[str],
) -> GmmModel:
    """
    Label each cluster with the most frequent true label of its members.

    Ties go to the label earliest in `class_names`. A cluster without members
    takes the label of the nearest (by mean distance) non-empty cluster.
    Both cases, and two clusters sharing a label, are logged as warnings.
    """
    if len(labels) != len(train_vectors):
        raise DataError("assign_cluster_labels needs one label per training vector")
    order = {name: i for i, name in enumerate(class_names)}
    unknown = sorted(set(labels) - set(order))
    if unknown:
        raise DataError(f"Labels outside the class set: {unknown}")

    assigned = hard_assignments(model, train_vectors)
    cluster_labels: List[str] = [""] * model.n_components
    empty = []
    for k in range(model.n_components):
        members = Counter(label for label, a in zip(labels, assigned) if a == k)
        if not members:
            empty.append(k)
            continue
        top = max(members.values())
        winners = sorted((name for name, c in members.items() if c == top), key=order.__getitem__)
        if len(winners) > 1:
            logger.warning("Cluster %d ties between %s; labeled %s", k, winners, winners[0])
        cluster_labels[k] = winners[0]

    if len(empty) == model.n_components:
        raise DataError("No training vector was assigned to any cluster")
    non_empty = [k for k in range(model.n_components) if k not in empty]
    for k in empty:
        distances = [np.linalg.norm(model.means[k] - model.means[j]) for j in non_empty]
        nearest = non_empty[int(np.argmin(distances))]
        cluster_labels[k] = cluster_labels[nearest]
        logger.warning("Cluster %d is empty; labeled %s from nearest cluster %d", k, cluster_labels[k], nearest)

    duplicates = sorted(name for name, c in Counter(cluster_labels).items() if c > 1)
    if duplicates:
        logger.warning("Several clusters share the label(s) %s", duplicates)
    return replace(model, cluster_labels=tuple(cluster_labels))


def cluster_composition(model: GmmModel, vectors: np.ndarray, labels: Sequence[str]) -> List[Dict[str, Any]]:
    """
    Per cluster: its label, member count and the count and share of each true label.
    """
    assigned = hard_assignments(model, vectors)
    report = []
    for k in range(model.n_components):
        members = Counter(label for label, a in zip(labels, assigned) if a == k)
        total = sum(members.values())
        report.append(
            {
                "cluster": k,
                "label": model.cluster_labels[k] if model.cluster_labels else None,
                "total": total,
                "counts": dict(sorted(members.items())),
                "shares": {name: count / total for name, count in sorted(members.items())},
            }
        )
    return report
