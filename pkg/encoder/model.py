"""
Bidirectional LSTM flow encoder.

Layers: BiLSTM(128, full sequence) -> LayerNorm -> BiLSTM(64, last state)
-> LayerNorm -> Dropout(0.1) -> Dense(64, GELU) -> head. The softmax head adds
a C-way output layer; the embedding head returns the 64-dim dense output.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict

import torch
from torch import nn

from utils.errors import ConfigurationError, DataError

HEAD_SOFTMAX = "softmax"
HEAD_EMBEDDING = "embedding"
HEADS = (HEAD_SOFTMAX, HEAD_EMBEDDING)


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the encoder. Widths are per direction."""

    num_classes: int = 10
    head: str = HEAD_SOFTMAX
    lstm1_units: int = 128
    lstm2_units: int = 64
    dense_units: int = 64
    dropout: float = 0.1
    sequence_length: int = 40
    input_features: int = 2
    time_scale: float = 1.0
    size_scale: float = 1500.0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigurationError(f"head must be one of {HEADS}, got '{self.head}'")
        for name in ("lstm1_units", "lstm2_units", "dense_units", "sequence_length", "input_features"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"EncoderConfig.{name} must be positive")
        if self.head == HEAD_SOFTMAX and self.num_classes < 2:
            raise ConfigurationError("A softmax head needs at least 2 classes")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.time_scale <= 0 or self.size_scale <= 0:
            raise ConfigurationError("Input scales must be positive")

    @property
    def output_dim(self) -> int:
        return self.num_classes if self.head == HEAD_SOFTMAX else self.dense_units

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class BiLstmEncoder(nn.Module):
    """Returns logits (softmax head) or raw embeddings (embedding head)."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.register_buffer(
            "input_scale",
            torch.tensor([config.time_scale, config.size_scale], dtype=torch.float32),
        )
        self.lstm1 = nn.LSTM(config.input_features, config.lstm1_units, batch_first=True, bidirectional=True)
        self.norm1 = nn.LayerNorm(2 * config.lstm1_units)
        self.lstm2 = nn.LSTM(2 * config.lstm1_units, config.lstm2_units, batch_first=True, bidirectional=True)
        self.norm2 = nn.LayerNorm(2 * config.lstm2_units)
        self.dropout = nn.Dropout(config.dropout)
        self.dense = nn.Linear(2 * config.lstm2_units, config.dense_units)
        self.activation = nn.GELU()
        self.output = nn.Linear(config.dense_units, config.num_classes) if config.head == HEAD_SOFTMAX else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        expected = (self.config.sequence_length, self.config.input_features)
        if x.dim() != 3 or tuple(x.shape[1:]) != expected:
            raise DataError(f"Encoder input must have shape (N, {expected[0]}, {expected[1]}), got {tuple(x.shape)}")
        x = x / self.input_scale.to(x.dtype)
        sequence, _ = self.lstm1(x)
        sequence = self.norm1(sequence)
        _, (h_n, _) = self.lstm2(sequence)
        # h_n: (2, N, units); forward and backward final states
        last = torch.cat([h_n[-2], h_n[-1]], dim=1)
        hidden = self.activation(self.dense(self.dropout(self.norm2(last))))
        if self.output is None:
            return hidden
        return self.output(hidden)


def build_encoder(config: EncoderConfig, seed: int = 0) -> BiLstmEncoder:
    """Construct an encoder with seeded default (fan-in uniform) initialization."""
    torch.manual_seed(seed)
    return BiLstmEncoder(config)
