"""
Embedding sets: extraction from a trained encoder and CSV exchange.

The CSV layout (e0..eD-1, label, session_id) is also the entry point for
embeddings produced by an external encoder.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from encoder.model import HEAD_EMBEDDING, BiLstmEncoder
from encoder.trainer import forward
from features.feature_set import FeatureSet
from utils.errors import ConfigurationError, DataError, EmbeddingFormatError, NumericalError

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 64


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray
    labels: Sequence[str]
    session_ids: Sequence[str]

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise DataError(f"Embeddings must be a 2-D array, got shape {self.vectors.shape}")
        if not len(self.vectors) == len(self.labels) == len(self.session_ids):
            raise DataError("Embedding vectors, labels and session ids differ in length")

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericalError("Cannot normalize a zero embedding")
    return vectors / norms


def embed_dataset(model: BiLstmEncoder, features: FeatureSet) -> EmbeddingSet:
    """Embed every sample, in order, and L2-normalize the result."""
    if model.config.head != HEAD_EMBEDDING:
        raise ConfigurationError("embed_dataset needs an encoder with the embedding head")
    if len(features) == 0:
        vectors = np.zeros((0, model.config.dense_units))
    else:
        vectors = l2_normalize(forward(model, features.values))
    logger.info("Embedded %d samples", len(vectors))
    return EmbeddingSet(vectors=vectors, labels=list(features.labels), session_ids=list(features.session_ids))


def export_embeddings(path: Path, embeddings: EmbeddingSet) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"e{i}" for i in range(embeddings.dim)] + ["label", "session_id"])
        for vector, label, session in zip(embeddings.vectors, embeddings.labels, embeddings.session_ids):
            writer.writerow([repr(float(v)) for v in vector] + [label, session])


def import_embeddings(path: Path, dim: int = EMBEDDING_DIM) -> EmbeddingSet:
    """
    Read and validate an embedding CSV.

    Rows are numbered from 1 for the first data row.

    Raises:
        EmbeddingFormatError: On a row with the wrong number of values or a
            non-finite value.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Embedding file not found: {path}")
    vectors, labels, sessions = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty embedding file")
        if header[-2:] != ["label", "session_id"] or len(header) - 2 != dim:
            raise EmbeddingFormatError(0, f"header must be e0..e{dim - 1},label,session_id")
        for row_number, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != dim + 2:
                raise EmbeddingFormatError(row_number, f"expected {dim} values plus label and session_id, got {len(row)} fields")
            try:
                values = [float(v) for v in row[:dim]]
            except ValueError as e:
                raise EmbeddingFormatError(row_number, f"non-numeric value ({e})") from e
            if not all(math.isfinite(v) for v in values):
                raise EmbeddingFormatError(row_number, "non-finite value")
            vectors.append(values)
            labels.append(row[dim])
            sessions.append(row[dim + 1])
    array = np.asarray(vectors, dtype=np.float64).reshape(-1, dim)
    return EmbeddingSet(vectors=array, labels=labels, session_ids=sessions)
