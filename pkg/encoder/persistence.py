"""
Encoder model files: a torch.save'd dict with the architecture, the training
settings, the class order and the weights.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import torch

from encoder.model import BiLstmEncoder, EncoderConfig
from encoder.trainer import TrainConfig
from utils.errors import DataError

logger = logging.getLogger(__name__)

MODEL_FORMAT = "bilstm-encoder/1"


@dataclass
class LoadedEncoder:
    model: BiLstmEncoder
    class_names: List[str]
    train_config: Optional[TrainConfig] = None
    loss_curve: List[float] = field(default_factory=list)
    seed: int = 0


def save_encoder(
    path: Path,
    model: BiLstmEncoder,
    class_names: Sequence[str],
    train_config: Optional[TrainConfig] = None,
    loss_curve: Sequence[float] = (),
    seed: int = 0,
) -> None:
    payload = {
        "format": MODEL_FORMAT,
        "encoder_config": model.config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "class_names": list(class_names),
        "seed": seed,
        "loss_curve": [float(x) for x in loss_curve],
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)
    logger.info("Saved encoder to %s", path)


def load_encoder(path: Path) -> LoadedEncoder:
    """
    Load an encoder saved by save_encoder, in eval mode.

    Raises:
        DataError: If the file is missing or not an encoder file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Encoder file not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise DataError(f"{path}: not a readable encoder file ({e})") from e
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: unsupported encoder format")

    model = BiLstmEncoder(EncoderConfig(**payload["encoder_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    train_config = payload.get("train_config")
    return LoadedEncoder(
        model=model,
        class_names=list(payload["class_names"]),
        train_config=TrainConfig(**train_config) if train_config else None,
        loss_curve=list(payload.get("loss_curve", [])),
        seed=int(payload.get("seed", 0)),
    )
