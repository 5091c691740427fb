"""
Synthetic labeled embeddings: Gaussian blobs on the unit sphere plus outliers.
"""

from typing import Optional, Sequence

import numpy as np

from encoder.embeddings import EmbeddingSet, l2_normalize
from ingest.records import BACKGROUND
from utils.errors import ConfigurationError

OUTLIER_SESSION = "outlier"


def orthogonal_means(n_classes: int, dim: int = 64) -> np.ndarray:
    """Unit vectors e_0 .. e_{C-1}."""
    if n_classes > dim:
        raise ConfigurationError("Cannot place more orthogonal means than dimensions")
    return np.eye(dim)[:n_classes]


def generate_embeddings(
    class_means: np.ndarray,
    spread: float,
    n_per_class: int,
    outlier_fraction: float = 0.0,
    seed: int = 0,
    class_names: Optional[Sequence[str]] = None,
    outlier_label: str = BACKGROUND,
) -> EmbeddingSet:
    """
    Sample class blobs and background outliers.

    Each class sample is its mean plus isotropic noise of std `spread`,
    renormalized. round(outlier_fraction * n_per_class) outliers labeled
    `outlier_label` are random unit vectors orthogonal to every class mean,
    so their cosine similarity to each mean is 0. Class samples carry the
    session id "<class>-blob", outliers "outlier".

    Args:
        class_means: (C, D) unit vectors.
        spread: Noise std, positive.
        n_per_class: Samples per class.
        outlier_fraction: Outliers per class-sample count.
        seed: Generator seed.
        class_names: Names of the C classes; defaults to class0..classC-1.
        outlier_label: Label of the outliers.
    """
    if spread <= 0:
        raise ConfigurationError("spread must be positive")
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be positive")
    if outlier_fraction < 0:
        raise ConfigurationError("outlier_fraction must be non-negative")
    means = l2_normalize(np.atleast_2d(np.asarray(class_means, dtype=np.float64)))
    n_classes, dim = means.shape
    names = list(class_names) if class_names is not None else [f"class{i}" for i in range(n_classes)]
    if len(names) != n_classes:
        raise ConfigurationError("class_names must name every class mean")

    rng = np.random.default_rng(seed)
    vectors, labels, sessions = [], [], []
    for name, mean in zip(names, means):
        blob = mean + spread * rng.standard_normal((n_per_class, dim))
        vectors.append(l2_normalize(blob))
        labels += [name] * n_per_class
        sessions += [f"{name}-blob"] * n_per_class

    n_outliers = int(round(outlier_fraction * n_per_class))
    if n_outliers:
        if n_classes >= dim:
            raise ConfigurationError("No direction is orthogonal to every class mean")
        # projector onto the orthogonal complement of the span of the means
        q, _ = np.linalg.qr(means.T)
        raw = rng.standard_normal((n_outliers, dim))
        residual = raw - (raw @ q) @ q.T
        vectors.append(l2_normalize(residual))
        labels += [outlier_label] * n_outliers
        sessions += [OUTLIER_SESSION] * n_outliers

    return EmbeddingSet(vectors=np.vstack(vectors), labels=labels, session_ids=sessions)
