"""
Class centroids and cosine-similarity vectors.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from encoder.embeddings import EmbeddingSet, l2_normalize
from utils.errors import DataError, EmptyClassError, NumericalError


@dataclass(frozen=True)
class CentroidSet:
    """
    One centroid per class, rows in `names` order.

    Entry c of a similarity vector always refers to names[c].
    """

    names: Tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.names):
            raise DataError("CentroidSet needs exactly one vector per class")
        if not np.isfinite(self.vectors).all():
            raise NumericalError("Centroids must be finite")
        if np.any(np.linalg.norm(self.vectors, axis=1) == 0):
            raise NumericalError("Centroids must be nonzero")

    def __len__(self) -> int:
        return len(self.names)

    def centroid(self, name: str) -> np.ndarray:
        return self.vectors[self.names.index(name)]


def compute_centroids(train_embeddings: EmbeddingSet, class_names: Sequence[str]) -> CentroidSet:
    """
    Mean of the L2-normalized training embeddings of each class.

    Raises:
        EmptyClassError: If a class has no training embedding.
    """
    normalized = l2_normalize(train_embeddings.vectors)
    labels = np.asarray(train_embeddings.labels)
    vectors = []
    for name in class_names:
        members = normalized[labels == name]
        if len(members) == 0:
            raise EmptyClassError(name, f"Class '{name}' has no training embeddings; cannot compute its centroid.")
        vectors.append(members.mean(axis=0))
    return CentroidSet(names=tuple(class_names), vectors=np.stack(vectors))


def similarity_matrix(embeddings: np.ndarray, centroids: CentroidSet) -> np.ndarray:
    """Cosine similarity of every embedding (rows) to every centroid (columns)."""
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if embeddings.shape[1] != centroids.vectors.shape[1]:
        raise DataError(
            f"Embedding dimension {embeddings.shape[1]} does not match centroid dimension {centroids.vectors.shape[1]}"
        )
    sims = l2_normalize(embeddings) @ l2_normalize(centroids.vectors).T
    return np.clip(sims, -1.0, 1.0)


def similarity_vector(e: np.ndarray, centroids: CentroidSet) -> np.ndarray:
    """
    C-dim vector of cosine similarities between `e` and each centroid.

    Raises:
        NumericalError: If `e` has zero norm.
    """
    return similarity_matrix(np.asarray(e, dtype=np.float64)[np.newaxis], centroids)[0]
