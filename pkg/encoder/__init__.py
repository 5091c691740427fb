"""
Encoder: BiLSTM classifier / embedding model, losses, training and persistence.
"""

from encoder.embeddings import EmbeddingSet, embed_dataset, export_embeddings, import_embeddings
from encoder.losses import cross_entropy_loss, supervised_contrastive_loss
from encoder.model import HEAD_EMBEDDING, HEAD_SOFTMAX, BiLstmEncoder, EncoderConfig, build_encoder
from encoder.persistence import LoadedEncoder, load_encoder, save_encoder
from encoder.trainer import TrainConfig, TrainResult, forward, predict_proba, train
