"""
Classification with abstention: GMM log-likelihood threshold and the softmax
max-probability baseline.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from confidence.centroids import similarity_matrix
from confidence.gmm import COSINE, GmmModel, loglik_batch, posterior
from encoder.embeddings import l2_normalize
from ingest.records import ABSTAIN
from utils.errors import ConfigurationError, DataError, ModelNotCalibratedError


@dataclass(frozen=True)
class Decision:
    """
    predicted is a class name or ABSTAIN. score is the mixture log-likelihood
    (GMM) or the highest softmax probability (baseline).
    """

    predicted: str
    score: float
    cluster: Optional[int] = None

    @property
    def abstained(self) -> bool:
        return self.predicted == ABSTAIN


def _require_labels(model: GmmModel) -> None:
    if model.cluster_labels is None:
        raise ModelNotCalibratedError("GMM clusters are not labeled; run assign_cluster_labels first")


def _active_threshold(model: GmmModel, threshold: Optional[float]) -> float:
    if threshold is not None:
        return threshold
    if model.threshold is None:
        raise ModelNotCalibratedError("GMM has no threshold; run calibrate_threshold first")
    return model.threshold


def model_inputs(model: GmmModel, embeddings: np.ndarray) -> np.ndarray:
    """Map raw embeddings into the space the model was fitted in."""
    if model.feature_space == COSINE:
        if model.centroids is None:
            raise DataError("Model has no centroids; cannot build similarity vectors")
        return similarity_matrix(embeddings, model.centroids)
    return l2_normalize(np.atleast_2d(np.asarray(embeddings, dtype=np.float64)))


def classify_gmm_batch(model: GmmModel, x: np.ndarray, threshold: Optional[float] = None) -> List[Decision]:
    """
    Decide every row of `x` (vectors in the model's feature space).

    threshold overrides the calibrated one; -inf never abstains.
    """
    _require_labels(model)
    cutoff = _active_threshold(model, threshold)
    scores = loglik_batch(model, x)
    clusters = posterior(model, x).argmax(axis=1)
    return [
        Decision(
            predicted=ABSTAIN if score < cutoff else model.cluster_labels[cluster],
            score=float(score),
            cluster=int(cluster),
        )
        for score, cluster in zip(scores, clusters)
    ]


def classify_gmm(model: GmmModel, x: np.ndarray, threshold: Optional[float] = None) -> Decision:
    return classify_gmm_batch(model, np.asarray(x)[np.newaxis], threshold)[0]


def classify_softmax_batch(probs: np.ndarray, threshold: float, class_names: Sequence[str]) -> List[Decision]:
    """Highest probability below `threshold` abstains; ties go to the earlier class."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if probs.shape[1] != len(class_names):
        raise ConfigurationError(f"Got {probs.shape[1]} probabilities for {len(class_names)} classes")
    best = probs.argmax(axis=1)
    top = probs[np.arange(len(probs)), best]
    return [
        Decision(predicted=ABSTAIN if p < threshold else class_names[i], score=float(p))
        for i, p in zip(best, top)
    ]


def classify_softmax(probs: np.ndarray, threshold: float, class_names: Sequence[str]) -> Decision:
    return classify_softmax_batch(np.asarray(probs)[np.newaxis], threshold, class_names)[0]
