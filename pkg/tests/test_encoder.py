import math

import numpy as np
import pytest
import torch

from encoder.embeddings import embed_dataset, export_embeddings, import_embeddings
from encoder.losses import cross_entropy_loss, supervised_contrastive_loss
from encoder.model import HEAD_EMBEDDING, HEAD_SOFTMAX, EncoderConfig, build_encoder
from encoder.persistence import load_encoder, save_encoder
from encoder.trainer import TrainConfig, class_accuracy, forward, predict_proba, train
from features.extraction import featurize
from ingest.records import ClassSet
from tests.conftest import make_flow
from utils.errors import ConfigurationError, DataError, DegenerateBatchError, EmbeddingFormatError

TINY = dict(lstm1_units=4, lstm2_units=3, dense_units=5, dropout=0.0)


def _dataset(per_class=4):
    rng = np.random.default_rng(0)
    flows = []
    for label, base in (("Video", 1200), ("Chat", 150)):
        for i in range(per_class):
            sizes = (base + rng.integers(-40, 40, size=40)).tolist()
            flows.append(make_flow(f"{label}{i}", sizes, label=label, session_id=f"{label}-s"))
    return featurize(flows)


# =============================================================================
# LOSSES
# =============================================================================

def test_supervised_contrastive_closed_form():
    z = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    labels = torch.tensor([0, 0, 1, 1])
    loss = supervised_contrastive_loss(z, labels, temperature=1.0)
    # each anchor: one positive at similarity 1, two negatives at 0
    assert loss.item() == pytest.approx(math.log(math.e + 2) - 1, rel=1e-6)


def test_supervised_contrastive_normalizes_its_input():
    z = torch.tensor([[3.0, 0.0], [0.5, 0.0], [0.0, 2.0], [0.0, 7.0]])
    labels = torch.tensor([0, 0, 1, 1])
    assert supervised_contrastive_loss(z, labels, 1.0).item() == pytest.approx(math.log(math.e + 2) - 1, rel=1e-6)


def test_anchors_without_positives_are_skipped():
    z = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    labels = torch.tensor([0, 0, 1])
    # anchor 2 has no positive; anchors 0 and 1 see one positive (1) and one negative (0)
    expected = math.log(math.e + 1) - 1
    assert supervised_contrastive_loss(z, labels, 1.0).item() == pytest.approx(expected, rel=1e-6)


def test_batch_without_positive_pairs_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        supervised_contrastive_loss(torch.eye(3), torch.tensor([0, 1, 2]))


def test_supervised_contrastive_gradient():
    torch.manual_seed(0)
    z = torch.randn(6, 4, dtype=torch.float64, requires_grad=True)
    labels = torch.tensor([0, 0, 1, 1, 2, 2])
    assert torch.autograd.gradcheck(lambda e: supervised_contrastive_loss(e, labels, 0.5), (z,))

def test_identical_embeddings_cost_log_of_the_other_samples():
    z = torch.ones(4, 3)
    labels = torch.tensor([0, 0, 1, 1])
    assert supervised_contrastive_loss(z, labels, 0.1).item() == pytest.approx(math.log(3), rel=1e-6)



def test_cross_entropy_matches_log_softmax():
    logits = torch.tensor([[2.0, 0.5, -1.0]])
    expected = -torch.log_softmax(logits, dim=1)[0, 0].item()
    assert cross_entropy_loss(logits, torch.tensor([0])).item() == pytest.approx(expected)


# =============================================================================
# MODEL
# =============================================================================

def test_heads_produce_expected_shapes():
    x = torch.zeros(3, 40, 2)
    softmax = build_encoder(EncoderConfig(num_classes=4, head=HEAD_SOFTMAX, **TINY))
    embedding = build_encoder(EncoderConfig(num_classes=4, head=HEAD_EMBEDDING, **TINY))
    assert softmax(x).shape == (3, 4)
    assert embedding(x).shape == (3, 5)
    with pytest.raises(DataError):
        softmax(torch.zeros(3, 39, 2))


def test_encoder_gradient_in_double_precision():
    model = build_encoder(EncoderConfig(num_classes=2, head=HEAD_EMBEDDING, lstm1_units=2, lstm2_units=2, dense_units=2, dropout=0.0))
    model = model.double().eval()
    x = torch.randn(1, 40, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(1)) * torch.tensor([1.0, 500.0], dtype=torch.float64)
    x.requires_grad_(True)
    assert torch.autograd.gradcheck(lambda inp: model(inp).sum(), (x,), eps=1e-6, atol=1e-4)

GRADCHECK_CASES = [(HEAD_SOFTMAX, "ce"), (HEAD_EMBEDDING, "supcon")]


@pytest.mark.parametrize("head,loss", GRADCHECK_CASES)
@pytest.mark.parametrize("seed", range(20))
def test_losses_through_a_tiny_encoder_match_finite_differences(seed, head, loss):
    config = EncoderConfig(
        num_classes=3, head=head, lstm1_units=4, lstm2_units=2, dense_units=3, dropout=0.0, sequence_length=8,
    )
    model = build_encoder(config, seed=seed).double().eval()
    generator = torch.Generator().manual_seed(seed)
    x = torch.randn(6, 8, 2, dtype=torch.float64, generator=generator) * torch.tensor([1.0, 500.0], dtype=torch.float64)
    labels = torch.tensor([0, 0, 1, 1, 2, 2])
    names = [name for name, _ in model.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for _, p in model.named_parameters())

    def objective(*flat):
        out = torch.func.functional_call(model, dict(zip(names, flat)), (x,))
        if loss == "ce":
            return cross_entropy_loss(out, labels)
        return supervised_contrastive_loss(out, labels, 0.5)

    assert torch.autograd.gradcheck(objective, params, eps=1e-6, atol=1e-8, rtol=1e-4, fast_mode=True)


def test_softmax_rows_sum_to_one():
    model = build_encoder(EncoderConfig(num_classes=4, head=HEAD_SOFTMAX, **TINY), seed=2)
    probs = forward(model, _dataset().values)
    assert probs.shape == (8, 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    single = forward(model, _dataset().values[0])
    assert single.shape == (4,)


def test_zero_weights_give_uniform_probabilities():
    model = build_encoder(EncoderConfig(num_classes=5, head=HEAD_SOFTMAX, **TINY))
    with torch.no_grad():
        for param in model.parameters():
            param.zero_()
    probs = forward(model, np.zeros((3, 40, 2)))
    np.testing.assert_allclose(probs, 0.2, atol=1e-7)



def test_invalid_configurations_are_rejected():
    with pytest.raises(ConfigurationError):
        EncoderConfig(head="linear")
    with pytest.raises(ConfigurationError):
        EncoderConfig(num_classes=1)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=1)


# =============================================================================
# TRAINING
# =============================================================================

def test_training_is_deterministic_for_a_seed():
    dataset = _dataset()
    cfg = TrainConfig(loss="ce", epochs=2, batch_size=4, rng_seed=3)
    config = EncoderConfig(num_classes=2, head=HEAD_SOFTMAX, **TINY)
    first = train(build_encoder(config, seed=3), dataset, cfg)
    second = train(build_encoder(config, seed=3), dataset, cfg)
    assert first.loss_curve == second.loss_curve
    assert len(first.loss_curve) == 2
    np.testing.assert_array_equal(predict_proba(first.model, dataset), predict_proba(second.model, dataset))


def test_zero_epochs_leaves_the_initialization():
    dataset = _dataset()
    config = EncoderConfig(num_classes=2, head=HEAD_EMBEDDING, **TINY)
    trained = train(build_encoder(config, seed=5), dataset, TrainConfig(loss="supcon", epochs=0, rng_seed=5))
    fresh = build_encoder(config, seed=5)
    assert trained.loss_curve == []
    for a, b in zip(trained.model.state_dict().values(), fresh.state_dict().values()):
        assert torch.equal(a, b)


def test_contrastive_training_produces_unit_embeddings():
    dataset = _dataset()
    config = EncoderConfig(num_classes=2, head=HEAD_EMBEDDING, **TINY)
    result = train(build_encoder(config, seed=1), dataset, TrainConfig(loss="supcon", epochs=2, batch_size=8, rng_seed=1))
    assert all(np.isfinite(result.loss_curve))
    embeddings = embed_dataset(result.model, dataset)
    assert embeddings.vectors.shape == (len(dataset), 5)
    np.testing.assert_allclose(np.linalg.norm(embeddings.vectors, axis=1), 1.0)

SEPARABLE = dict(lstm1_units=8, lstm2_units=4, dense_units=8, dropout=0.0)


def test_two_separated_classes_are_learned_within_thirty_epochs():
    dataset = _dataset(per_class=100)
    class_set = ClassSet.from_labels(dataset.labels)
    model = build_encoder(EncoderConfig(num_classes=2, head=HEAD_SOFTMAX, **SEPARABLE), seed=0)
    cfg = TrainConfig(loss="ce", epochs=30, batch_size=32, learning_rate=5e-3, rng_seed=0)
    result = train(model, dataset, cfg, class_set)
    assert len(result.accuracy_curve) == 30
    assert class_accuracy(result.model, dataset, class_set.names) >= 0.95


def test_contrastive_embeddings_are_closer_within_a_class():
    dataset = _dataset(per_class=100)
    class_set = ClassSet.from_labels(dataset.labels)
    model = build_encoder(EncoderConfig(num_classes=2, head=HEAD_EMBEDDING, **SEPARABLE), seed=0)
    cfg = TrainConfig(loss="supcon", epochs=30, batch_size=32, learning_rate=5e-3, rng_seed=0)
    embeddings = embed_dataset(train(model, dataset, cfg, class_set).model, dataset)

    cosine = embeddings.vectors @ embeddings.vectors.T
    labels = np.asarray(embeddings.labels)
    same = labels[:, None] == labels[None, :]
    off_diagonal = ~np.eye(len(labels), dtype=bool)
    assert cosine[same & off_diagonal].mean() > cosine[~same].mean()



def test_loss_must_match_the_head():
    dataset = _dataset()
    model = build_encoder(EncoderConfig(num_classes=2, head=HEAD_EMBEDDING, **TINY))
    with pytest.raises(ConfigurationError):
        train(model, dataset, TrainConfig(loss="ce", epochs=1))


def test_saved_encoder_reproduces_predictions(tmp_path):
    dataset = _dataset()
    class_set = ClassSet.from_labels(dataset.labels)
    cfg = TrainConfig(loss="ce", epochs=1, batch_size=4, rng_seed=2)
    result = train(build_encoder(EncoderConfig(num_classes=2, **TINY), seed=2), dataset, cfg, class_set)
    path = tmp_path / "encoder.pt"
    save_encoder(path, result.model, class_set.names, cfg, result.loss_curve, seed=2)

    loaded = load_encoder(path)
    assert loaded.class_names == ["Video", "Chat"]
    assert loaded.train_config == cfg
    np.testing.assert_array_equal(predict_proba(loaded.model, dataset), predict_proba(result.model, dataset))


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.pt"
    torch.save({"format": "something-else"}, path)
    with pytest.raises(DataError):
        load_encoder(path)


# =============================================================================
# EMBEDDING FILES
# =============================================================================

def test_embedding_rows_are_validated(tmp_path):
    path = tmp_path / "emb.csv"
    path.write_text("e0,e1,label,session_id\n0.6,0.8,Video,s1\n0.1,Chat,s2\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError) as info:
        import_embeddings(path, dim=2)
    assert info.value.row == 2

    path.write_text("e0,e1,label,session_id\n0.6,nan,Video,s1\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError) as info:
        import_embeddings(path, dim=2)
    assert info.value.row == 1


def test_embedding_file_keeps_exact_values(tmp_path):
    dataset = _dataset(per_class=2)
    model = build_encoder(EncoderConfig(num_classes=2, head=HEAD_EMBEDDING, **TINY), seed=4)
    embeddings = embed_dataset(model, dataset)
    path = tmp_path / "emb.csv"
    export_embeddings(path, embeddings)
    loaded = import_embeddings(path, dim=5)
    np.testing.assert_array_equal(loaded.vectors, embeddings.vectors)
    assert loaded.labels == list(dataset.labels)
