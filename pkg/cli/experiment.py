"""
Pipeline building blocks shared by the subcommands and the experiment runner.

Each helper strings together library operations for one step of an
experiment: training an encoder from config settings, fitting the confidence
model on training embeddings, and turning a threshold into decisions for a
sweep.
"""

import dataclasses
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from confidence.centroids import compute_centroids, similarity_matrix
from confidence.clusters import assign_cluster_labels
from confidence.decisions import Decision, classify_gmm_batch, classify_softmax_batch, model_inputs
from confidence.gmm import COSINE, EMBEDDING, EmConfig, GmmModel, fit_gmm, threshold_at_percentile
from encoder.embeddings import EmbeddingSet
from encoder.model import HEAD_SOFTMAX, EncoderConfig, build_encoder
from encoder.trainer import CROSS_ENTROPY, SUPERVISED_CONTRASTIVE, TrainConfig, TrainResult, train
from features.feature_set import FeatureSet
from ingest.records import BACKGROUND, ClassSet
from utils.config import EncoderSection, GmmSection
from utils.errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

Evaluator = Callable[[float], List[Decision]]

# the contrastive encoder is seeded apart from the softmax encoder
CONTRASTIVE_SEED_OFFSET = 1


def class_set_for(labels: Sequence[str], background: Optional[str] = BACKGROUND) -> ClassSet:
    """Class order for an experiment: default classes first, then the rest sorted."""
    if not labels:
        raise DataError("No labeled samples to derive a class set from")
    return ClassSet.from_labels(labels, background)


def encoder_config(section: EncoderSection, head: str, num_classes: int) -> EncoderConfig:
    return EncoderConfig(
        num_classes=num_classes,
        head=head,
        lstm1_units=section.lstm1_units,
        lstm2_units=section.lstm2_units,
        dense_units=section.dense_units,
        dropout=section.dropout,
    )


def train_config(section: EncoderSection, loss: str, seed: int) -> TrainConfig:
    return TrainConfig(
        loss=loss,
        temperature=section.temperature,
        batch_size=section.batch_size,
        epochs=section.epochs,
        learning_rate=section.learning_rate,
        rng_seed=seed,
        threads=section.threads,
    )


def train_encoder(
    features: FeatureSet,
    class_set: ClassSet,
    section: EncoderSection,
    head: str,
    seed: int,
) -> Tuple[TrainResult, TrainConfig]:
    """
    Build and train one encoder: cross entropy for the softmax head,
    supervised contrastive loss for the embedding head.
    """
    loss = CROSS_ENTROPY if head == HEAD_SOFTMAX else SUPERVISED_CONTRASTIVE
    cfg = train_config(section, loss, seed)
    model = build_encoder(encoder_config(section, head, len(class_set)), seed=seed)
    result = train(model, features, cfg, class_set=class_set)
    return result, cfg


def em_config(section: GmmSection, seed: int) -> EmConfig:
    return EmConfig(
        max_iters=section.max_iters,
        tol=section.tol,
        cov_regularization=section.cov_regularization,
        seed=seed,
        ridge_mode=section.ridge_mode,
    )


def fit_confidence_model(
    train_embeddings: EmbeddingSet,
    class_names: Sequence[str],
    k: Optional[int] = None,
    feature_space: str = COSINE,
    cfg: EmConfig = EmConfig(),
) -> GmmModel:
    """
    Centroids, GMM fit and cluster labels from labeled training embeddings.

    Args:
        train_embeddings: L2-normalized training embeddings with labels.
        class_names: Class order; every class needs at least one embedding.
        k: Number of components; defaults to the number of classes.
        feature_space: "cosine" fits on similarity vectors, "embedding" on
            the embeddings themselves.
        cfg: EM settings.

    Returns:
        A labeled, uncalibrated model holding its centroids.
    """
    if feature_space not in (COSINE, EMBEDDING):
        raise ConfigurationError(f"Unknown feature space '{feature_space}'")
    centroids = compute_centroids(train_embeddings, class_names)
    if feature_space == COSINE:
        x = similarity_matrix(train_embeddings.vectors, centroids)
    else:
        x = train_embeddings.vectors
    model = fit_gmm(x, k or len(class_names), cfg, feature_space=feature_space)
    model = dataclasses.replace(model, centroids=centroids)
    return assign_cluster_labels(model, x, train_embeddings.labels, class_names)


def gmm_evaluator(model: GmmModel, embeddings: np.ndarray) -> Evaluator:
    """percentile -> decisions, with the threshold taken from the training log-likelihoods."""
    if model.train_logliks is None:
        raise DataError("The GMM holds no training log-likelihoods to calibrate against")
    x = model_inputs(model, embeddings)

    def evaluate(percentile: float) -> List[Decision]:
        return classify_gmm_batch(model, x, threshold_at_percentile(model.train_logliks, percentile))

    return evaluate


def softmax_evaluator(probs: np.ndarray, class_names: Sequence[str]) -> Evaluator:
    """probability threshold -> decisions."""

    def evaluate(threshold: float) -> List[Decision]:
        return classify_softmax_batch(probs, threshold, class_names)

    return evaluate


def parse_grid(spec: Optional[str], default: Sequence[float]) -> List[float]:
    """
    Parse a sweep grid: "default", a comma list ("0.5,0.9,0.99") or a
    start:stop:step range with both ends included ("0:10:0.5").
    """
    if spec is None or spec == "default":
        return list(default)
    try:
        if ":" in spec:
            start, stop, step = (float(v) for v in spec.split(":"))
            if step <= 0 or stop < start:
                raise ValueError("expected start <= stop and a positive step")
            count = int(round((stop - start) / step))
            return [round(start + step * i, 6) for i in range(count + 1)]
        return [float(v) for v in spec.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigurationError(f"Invalid grid '{spec}': {e}") from e

