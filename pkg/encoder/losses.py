"""
Training losses.
"""

import torch
import torch.nn.functional as F

from utils.errors import ConfigurationError, DegenerateBatchError

DEFAULT_TEMPERATURE = 0.07


def cross_entropy_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, targets)


def supervised_contrastive_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    temperature: float = DEFAULT_TEMPERATURE,
) -> torch.Tensor:
    """
    Supervised contrastive loss over a batch.

    For anchor i with positives P(i) (same label, excluding i):
        l_i = -1/|P(i)| * sum_p log( exp(z_i.z_p/t) / sum_{a != i} exp(z_i.z_a/t) )
    The loss is the mean of l_i over anchors with at least one positive.
    Embeddings are L2-normalized here, so callers may pass raw encoder output.

    Args:
        embeddings: (B, D) batch.
        labels: (B,) integer class ids.
        temperature: Softmax temperature, positive.

    Returns:
        Scalar loss tensor.

    Raises:
        DegenerateBatchError: If no anchor has a positive.
    """
    if temperature <= 0:
        raise ConfigurationError("temperature must be positive")
    z = F.normalize(embeddings, p=2, dim=1)
    batch = z.shape[0]
    self_mask = torch.eye(batch, dtype=torch.bool, device=z.device)
    positives = (labels.unsqueeze(0) == labels.unsqueeze(1)) & ~self_mask
    n_positives = positives.sum(dim=1)
    anchors = n_positives > 0
    if not bool(anchors.any()):
        raise DegenerateBatchError("degenerate contrastive batch: no anchor has a positive")

    similarity = z @ z.T / temperature
    log_norm = torch.logsumexp(similarity.masked_fill(self_mask, float("-inf")), dim=1, keepdim=True)
    log_prob = similarity - log_norm
    positive_log_prob = torch.where(positives, log_prob, torch.zeros_like(log_prob)).sum(dim=1)
    per_anchor = -positive_log_prob[anchors] / n_positives[anchors]
    return per_anchor.mean()
