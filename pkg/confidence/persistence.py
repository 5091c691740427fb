"""
JSON model files for the GMM and CSV files for decisions.
"""

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from confidence.centroids import CentroidSet
from confidence.decisions import Decision
from confidence.gmm import GmmModel
from utils.errors import DataError

logger = logging.getLogger(__name__)

GMM_FORMAT = "gmm/1"
DECISION_COLUMNS = ["sample", "label", "predicted", "score", "cluster"]


def gmm_to_dict(model: GmmModel) -> dict:
    return {
        "format": GMM_FORMAT,
        "feature_space": model.feature_space,
        "ridge": model.ridge,
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        # covariances row-major, one flat list per component
        "covariances": [c.ravel().tolist() for c in model.covariances],
        "cluster_labels": list(model.cluster_labels) if model.cluster_labels else None,
        "threshold": model.threshold,
        "percentile": model.percentile,
        "centroids": (
            {"names": list(model.centroids.names), "vectors": model.centroids.vectors.tolist()}
            if model.centroids is not None
            else None
        ),
        "train_logliks": model.train_logliks.tolist() if model.train_logliks is not None else None,
        "metadata": model.metadata,
    }


def gmm_from_dict(record: dict) -> GmmModel:
    if record.get("format") != GMM_FORMAT:
        raise DataError(f"Unsupported GMM format: {record.get('format')}")
    means = np.asarray(record["means"], dtype=np.float64)
    k, d = means.shape
    centroids = record.get("centroids")
    logliks = record.get("train_logliks")
    labels = record.get("cluster_labels")
    return GmmModel(
        weights=np.asarray(record["weights"], dtype=np.float64),
        means=means,
        covariances=np.asarray(record["covariances"], dtype=np.float64).reshape(k, d, d),
        feature_space=record["feature_space"],
        ridge=float(record.get("ridge", 0.0)),
        cluster_labels=tuple(labels) if labels else None,
        threshold=record.get("threshold"),
        percentile=record.get("percentile"),
        centroids=(
            CentroidSet(names=tuple(centroids["names"]), vectors=np.asarray(centroids["vectors"], dtype=np.float64))
            if centroids
            else None
        ),
        train_logliks=np.asarray(logliks, dtype=np.float64) if logliks is not None else None,
        metadata=record.get("metadata", {}),
    )


def save_gmm(path: Path, model: GmmModel) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(gmm_to_dict(model), f, indent=2, sort_keys=True)
    logger.info("Saved GMM to %s", path)


def load_gmm(path: Path) -> GmmModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"GMM file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
        return gmm_from_dict(record)
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
        raise DataError(f"{path}: malformed GMM file ({e})") from e


def write_decisions(
    path: Path,
    labels: Sequence[str],
    decisions: Sequence[Decision],
    sample_ids: Optional[Sequence[str]] = None,
) -> None:
    """One row per sample; scores use fixed formatting so reruns are byte-identical."""
    if len(labels) != len(decisions):
        raise DataError("write_decisions needs one label per decision")
    frame = pd.DataFrame(
        {
            "sample": list(sample_ids) if sample_ids is not None else [str(i) for i in range(len(decisions))],
            "label": list(labels),
            "predicted": [d.predicted for d in decisions],
            "score": [f"{d.score:.12g}" for d in decisions],
            "cluster": ["" if d.cluster is None else str(d.cluster) for d in decisions],
        },
        columns=DECISION_COLUMNS,
    )
    frame.to_csv(path, index=False, lineterminator="\n")


def read_decisions(path: Path) -> Tuple[List[str], List[Decision]]:
    """Returns (true labels, decisions)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Decision file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in DECISION_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}")
    decisions = []
    for row_number, row in enumerate(frame.itertuples(index=False), start=1):
        try:
            decisions.append(
                Decision(
                    predicted=row.predicted,
                    score=float(row.score),
                    cluster=int(row.cluster) if row.cluster != "" else None,
                )
            )
        except ValueError as e:
            raise DataError(f"{path}: row {row_number}: {e}") from e
    return frame["label"].tolist(), decisions
