"""
Encoder training and inference.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from encoder.losses import DEFAULT_TEMPERATURE, cross_entropy_loss, supervised_contrastive_loss
from encoder.model import HEAD_EMBEDDING, HEAD_SOFTMAX, BiLstmEncoder
from features.feature_set import TIMESERIES, FeatureSet
from ingest.records import ClassSet
from utils.errors import ConfigurationError, DataError, DegenerateBatchError, TrainingDivergedError
from utils.logging_setup import progress_disabled

logger = logging.getLogger(__name__)

CROSS_ENTROPY = "cross_entropy"
SUPERVISED_CONTRASTIVE = "supervised_contrastive"
LOSSES = (CROSS_ENTROPY, SUPERVISED_CONTRASTIVE)

# CLI spellings
LOSS_ALIASES = {"ce": CROSS_ENTROPY, "supcon": SUPERVISED_CONTRASTIVE}

INFERENCE_BATCH = 512


@dataclass(frozen=True)
class TrainConfig:
    loss: str = CROSS_ENTROPY
    temperature: float = DEFAULT_TEMPERATURE
    batch_size: int = 64
    epochs: int = 20
    learning_rate: float = 1e-3
    rng_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "loss", LOSS_ALIASES.get(self.loss, self.loss))
        if self.loss not in LOSSES:
            raise ConfigurationError(f"loss must be one of {LOSSES}, got '{self.loss}'")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainResult:
    model: BiLstmEncoder
    loss_curve: List[float] = field(default_factory=list)
    accuracy_curve: List[float] = field(default_factory=list)


def configure_determinism(seed: int, threads: int = 1) -> None:
    """Seed torch and pin it to deterministic kernels and a fixed thread count."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(threads)


def to_tensor(values: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(values), dtype=torch.float32)


def train(
    model: BiLstmEncoder,
    dataset: FeatureSet,
    cfg: TrainConfig,
    class_set: Optional[ClassSet] = None,
) -> TrainResult:
    """
    Train an encoder in place.

    Cross entropy requires the softmax head; the contrastive loss takes the
    embedding head. One loss value (mean over batches) is recorded per epoch.

    Args:
        model: Freshly built encoder.
        dataset: Time-series features, ideally balanced.
        cfg: Optimisation settings.
        class_set: Class order for the label indices. Defaults to the sorted
            labels present.

    Raises:
        TrainingDivergedError: If a batch loss is NaN or infinite.
        DegenerateBatchError: If no batch of an epoch has a contrastive positive.
    """
    if dataset.kind != TIMESERIES:
        raise DataError("The encoder trains on time-series features")
    head = model.config.head
    if cfg.loss == CROSS_ENTROPY and head != HEAD_SOFTMAX:
        raise ConfigurationError("Cross-entropy training needs the softmax head")
    if cfg.loss == SUPERVISED_CONTRASTIVE and head != HEAD_EMBEDDING:
        raise ConfigurationError("Contrastive training needs the embedding head")
    if len(dataset) == 0:
        raise DataError("Cannot train on an empty dataset")

    class_set = class_set or ClassSet.from_labels(sorted(set(dataset.labels)))
    counts = dataset.class_counts()
    if len(set(counts.values())) > 1:
        logger.warning("Training set is not balanced: %s", dict(sorted(counts.items())))

    configure_determinism(cfg.rng_seed, cfg.threads)
    inputs = to_tensor(dataset.values)
    targets = torch.as_tensor([class_set.index(label) for label in dataset.labels], dtype=torch.long)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    generator = torch.Generator().manual_seed(cfg.rng_seed)

    result = TrainResult(model=model)
    epochs = tqdm(range(cfg.epochs), desc=f"train[{cfg.loss}]", disable=progress_disabled(logger))
    for epoch in epochs:
        model.train()
        order = torch.randperm(len(inputs), generator=generator)
        losses, correct, used = [], 0, 0
        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2 and cfg.loss == SUPERVISED_CONTRASTIVE:
                continue
            outputs = model(inputs[idx])
            try:
                if cfg.loss == CROSS_ENTROPY:
                    loss = cross_entropy_loss(outputs, targets[idx])
                else:
                    loss = supervised_contrastive_loss(outputs, targets[idx], cfg.temperature)
            except DegenerateBatchError:
                logger.debug("Epoch %d batch %d has no positive pair; skipped", epoch, batch_index)
                continue
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"Loss became {loss.item()} at epoch {epoch}, batch {batch_index} "
                    f"(learning rate {cfg.learning_rate}); try a lower learning rate"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
            if cfg.loss == CROSS_ENTROPY:
                correct += int((outputs.argmax(dim=1) == targets[idx]).sum())
                used += len(idx)

        if not losses:
            raise DegenerateBatchError(f"degenerate contrastive batch: every batch of epoch {epoch} lacked positives")
        result.loss_curve.append(float(np.mean(losses)))
        if used:
            result.accuracy_curve.append(correct / used)
        logger.debug("Epoch %d loss %.6f", epoch, result.loss_curve[-1])

    model.eval()
    if result.loss_curve:
        logger.info("Trained %s encoder for %d epochs, final loss %.4f", cfg.loss, cfg.epochs, result.loss_curve[-1])
    return result


def _infer(model: BiLstmEncoder, values: np.ndarray) -> np.ndarray:
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(values), INFERENCE_BATCH):
            outputs.append(model(to_tensor(values[start : start + INFERENCE_BATCH])))
    if not outputs:
        return np.zeros((0, model.config.output_dim))
    return torch.cat(outputs).double().numpy()


def forward(model: BiLstmEncoder, feature: np.ndarray) -> np.ndarray:
    """
    Run one feature (40x2) or a batch (N, 40, 2) through the model.

    Returns softmax probabilities for the softmax head, raw embeddings for the
    embedding head. A single feature yields a vector, a batch a matrix.

    Raises:
        DataError: On a shape mismatch.
    """
    values = np.asarray(feature, dtype=np.float64)
    single = values.ndim == 2
    if single:
        values = values[np.newaxis]
    outputs = _infer(model, values)
    if model.config.head == HEAD_SOFTMAX:
        outputs = torch.softmax(torch.as_tensor(outputs), dim=1).numpy()
    return outputs[0] if single else outputs


def predict_proba(model: BiLstmEncoder, features: FeatureSet) -> np.ndarray:
    """Softmax probabilities, one row per sample."""
    if model.config.head != HEAD_SOFTMAX:
        raise ConfigurationError("predict_proba needs the softmax head")
    return forward(model, features.values) if len(features) else np.zeros((0, model.config.num_classes))


def class_accuracy(model: BiLstmEncoder, features: FeatureSet, class_names: Sequence[str]) -> float:
    """Fraction of samples whose argmax class matches their label."""
    probs = predict_proba(model, features)
    predicted = [class_names[i] for i in probs.argmax(axis=1)]
    return float(np.mean([p == t for p, t in zip(predicted, features.labels)])) if predicted else 0.0
