import logging

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from cli.experiment import fit_confidence_model
from confidence.centroids import CentroidSet, compute_centroids, similarity_matrix, similarity_vector
from confidence.clusters import assign_cluster_labels, cluster_composition
from confidence.decisions import classify_gmm_batch, classify_softmax, classify_softmax_batch, model_inputs
from confidence.gmm import (
    EMBEDDING,
    EmConfig,
    GmmModel,
    calibrate_threshold,
    fit_gmm,
    loglik,
    loglik_batch,
    percentile_index,
    posterior,
    threshold_at_percentile,
)
from confidence.persistence import load_gmm, read_decisions, save_gmm, write_decisions
from encoder.embeddings import EmbeddingSet
from ingest.records import ABSTAIN, BACKGROUND
from metrics.sweep import percentile_grid
from synth.embeddings import generate_embeddings, orthogonal_means
from utils.errors import ConfigurationError, EmptyClassError, ModelNotCalibratedError, NumericalError

BLOB_CENTERS = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])


def _blobs(seed=0, per_blob=100, scale=1.0):
    rng = np.random.default_rng(seed)
    x = np.vstack([c + scale * rng.standard_normal((per_blob, 2)) for c in BLOB_CENTERS])
    labels = [name for name in ("A", "B", "C") for _ in range(per_blob)]
    return x, labels


# =============================================================================
# EM
# =============================================================================

def test_penalized_objective_never_decreases():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        centers = rng.uniform(-5, 5, size=(3, 2))
        x = np.vstack([c + rng.standard_normal((30, 2)) for c in centers])
        model = fit_gmm(x, 3, EmConfig(max_iters=40, tol=0.0, seed=seed))
        if model.metadata["reseeds"]:
            continue
        history = np.asarray(model.metadata["history"])
        steps = np.diff(history)
        assert (steps >= -1e-9 * np.abs(history[1:])).all(), f"objective decreased for dataset {seed}"


def test_single_component_is_the_regularized_sample_covariance():
    x, _ = _blobs(seed=1)
    eps = 1e-3
    model = fit_gmm(x, 1, EmConfig(cov_regularization=eps))
    np.testing.assert_allclose(model.weights, [1.0])
    np.testing.assert_allclose(model.means[0], x.mean(axis=0))
    expected = np.cov(x.T, bias=True) + eps * np.eye(2)
    np.testing.assert_allclose(model.covariances[0], expected, rtol=1e-10)


def test_separated_blobs_are_recovered():
    x, _ = _blobs(seed=2)
    model = fit_gmm(x, 3, EmConfig(seed=2))
    for center in BLOB_CENTERS:
        assert np.min(np.linalg.norm(model.means - center, axis=1)) < 0.5
    np.testing.assert_allclose(np.sort(model.weights), [1 / 3] * 3, atol=0.02)


def test_loglik_matches_scipy():
    x, _ = _blobs(seed=3)
    model = fit_gmm(x, 3, EmConfig(seed=3))
    components = np.column_stack([
        np.log(w) + multivariate_normal(mean=m, cov=c).logpdf(x)
        for w, m, c in zip(model.weights, model.means, model.covariances)
    ])
    np.testing.assert_allclose(loglik_batch(model, x), logsumexp(components, axis=1), rtol=1e-9)
    np.testing.assert_allclose(posterior(model, x).sum(axis=1), 1.0)
    np.testing.assert_allclose(model.train_logliks, loglik_batch(model, x))


def test_fit_is_deterministic_for_a_seed():
    x, _ = _blobs(seed=4)
    a = fit_gmm(x, 3, EmConfig(seed=8))
    b = fit_gmm(x, 3, EmConfig(seed=8))
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.covariances, b.covariances)


def test_standard_gaussian_at_its_mean():
    model = GmmModel(weights=np.array([1.0]), means=np.array([[0.3, 0.4]]), covariances=np.eye(2)[np.newaxis])
    assert loglik(model, np.array([0.3, 0.4])) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)
    farther = [loglik(model, np.array([0.3 + d, 0.4])) for d in (0.5, 1.0, 2.0)]
    assert farther == sorted(farther, reverse=True)


def _uneven_blobs():
    rng = np.random.default_rng(6)
    large = rng.standard_normal((200, 2))
    small = np.array([100.0, 0.0]) + 0.5 * rng.standard_normal((20, 2))
    return np.vstack([large, small]), small


@pytest.mark.parametrize("mode, added", [("fixed", 1e-2), ("prior", 1e-2 * 220 / (2 * 20))])
def test_ridge_mode_sets_the_small_component_covariance(mode, added):
    x, small = _uneven_blobs()
    model = fit_gmm(x, 2, EmConfig(max_iters=20, tol=0.0, cov_regularization=1e-2, seed=0, ridge_mode=mode))
    j = int(np.argmin(model.weights))
    np.testing.assert_allclose(model.means[j], small.mean(axis=0), rtol=1e-9)
    expected = np.cov(small.T, bias=True) + added * np.eye(2)
    np.testing.assert_allclose(model.covariances[j], expected, rtol=1e-8, atol=1e-12)
    assert model.metadata["ridge_mode"] == mode


def test_unknown_ridge_mode_is_rejected():
    with pytest.raises(ConfigurationError):
        EmConfig(ridge_mode="shrink")


def test_component_count_is_checked():
    x = np.zeros((4, 2)) + np.arange(4)[:, None]
    with pytest.raises(ConfigurationError):
        fit_gmm(x, 5)
    with pytest.raises(ConfigurationError):
        fit_gmm(x, 0)


# =============================================================================
# THRESHOLDS
# =============================================================================

def test_percentile_threshold_leaves_m_values_below():
    values = np.random.default_rng(0).permutation(np.arange(1.0, 101.0))
    assert threshold_at_percentile(values, 5) == 6.0
    assert threshold_at_percentile(values, 0) == 1.0
    top = threshold_at_percentile(values, 100)
    assert top > 100.0 and (values < top).all()


def test_percentile_index_uses_the_decimal_value():
    assert percentile_index(0.57, 10000) == 57
    assert percentile_index(2.5, 40) == 1
    assert percentile_index(10, 7) == 0


def test_percentile_out_of_range_is_rejected():
    with pytest.raises(ConfigurationError):
        threshold_at_percentile(np.arange(5.0), 101)


def test_calibrated_model_abstains_on_exactly_m_training_samples():
    x, labels = _blobs(seed=5)
    model = assign_cluster_labels(fit_gmm(x, 3, EmConfig(seed=5)), x, labels, ["A", "B", "C"])
    grid = percentile_grid()
    assert grid[0] == 0.0 and grid[-1] == 10.0 and len(grid) == 21
    for p in grid:
        calibrated = calibrate_threshold(model, x, p)
        decisions = classify_gmm_batch(calibrated, x)
        assert sum(d.predicted == ABSTAIN for d in decisions) == percentile_index(p, len(x))


def test_abstentions_nest_as_the_percentile_grows():
    x, labels = _blobs(seed=6)
    model = assign_cluster_labels(fit_gmm(x, 3, EmConfig(seed=6)), x, labels, ["A", "B", "C"])
    test = np.random.default_rng(7).uniform(-4, 14, size=(200, 2))
    previous = set()
    for p in percentile_grid() + [25.0]:
        decisions = classify_gmm_batch(model, test, threshold_at_percentile(model.train_logliks, p))
        current = {i for i, d in enumerate(decisions) if d.predicted == ABSTAIN}
        assert previous <= current
        previous = current


# =============================================================================
# CENTROIDS, CLUSTER LABELS AND DECISIONS
# =============================================================================

def test_centroids_average_normalized_embeddings():
    embeddings = EmbeddingSet(
        vectors=np.array([[2.0, 0.0], [0.0, 3.0], [0.0, -1.0]]),
        labels=["A", "A", "B"],
        session_ids=["s"] * 3,
    )
    centroids = compute_centroids(embeddings, ["A", "B"])
    np.testing.assert_allclose(centroids.vectors, [[0.5, 0.5], [0.0, -1.0]])
    sims = similarity_matrix(embeddings.vectors, centroids)
    assert sims.shape == (3, 2)
    np.testing.assert_allclose(sims[0], [np.sqrt(0.5), 0.0])
    with pytest.raises(EmptyClassError):
        compute_centroids(embeddings, ["A", "B", "C"])


def test_cluster_labels_follow_the_majority():
    x, labels = _blobs(seed=9)
    labels = list(labels)
    # relabel a few members of blob A; A stays the majority
    for i in range(10):
        labels[i] = "B"
    model = assign_cluster_labels(fit_gmm(x, 3, EmConfig(seed=9)), x, labels, ["A", "B", "C"])
    assert sorted(model.cluster_labels) == ["A", "B", "C"]
    report = cluster_composition(model, x, labels)
    a_cluster = next(r for r in report if r["label"] == "A")
    assert a_cluster["counts"] == {"A": 90, "B": 10}
    assert a_cluster["shares"]["A"] == pytest.approx(0.9)


def test_unlabeled_or_uncalibrated_models_refuse_to_classify():
    x, labels = _blobs(seed=10)
    model = fit_gmm(x, 3, EmConfig(seed=10))
    with pytest.raises(ModelNotCalibratedError):
        classify_gmm_batch(model, x)
    labeled = assign_cluster_labels(model, x, labels, ["A", "B", "C"])
    with pytest.raises(ModelNotCalibratedError):
        classify_gmm_batch(labeled, x)
    assert not any(d.abstained for d in classify_gmm_batch(labeled, x, threshold=-np.inf))


def test_softmax_threshold_is_inclusive():
    names = ["A", "B"]
    assert classify_softmax(np.array([0.6, 0.4]), 0.6, names).predicted == "A"
    assert classify_softmax(np.array([0.6, 0.4]), 0.61, names).predicted == ABSTAIN
    # ties go to the earlier class
    assert classify_softmax(np.array([0.5, 0.5]), 0.0, names).predicted == "A"
    with pytest.raises(ConfigurationError):
        classify_softmax_batch(np.array([[0.2, 0.3, 0.5]]), 0.5, names)


def test_outliers_abstain_far_more_often_than_known_classes():
    names = ["A", "B", "C", "D", "E"]
    means = orthogonal_means(5, 64)
    train = generate_embeddings(means, spread=0.05, n_per_class=100, seed=1, class_names=names)
    test = generate_embeddings(means, spread=0.05, n_per_class=50, outlier_fraction=0.4, seed=2, class_names=names)

    model = fit_confidence_model(train, names, cfg=EmConfig(seed=1))
    model = calibrate_threshold(model, None, 5.0)
    decisions = classify_gmm_batch(model, model_inputs(model, test.vectors))

    outlier = [d.abstained for d, label in zip(decisions, test.labels) if label == BACKGROUND]
    known = [(d, label) for d, label in zip(decisions, test.labels) if label != BACKGROUND]
    assert len(outlier) == 20
    assert np.mean(outlier) >= 0.9
    assert np.mean([d.abstained for d, _ in known]) < 0.2
    kept = [d.predicted == label for d, label in known if not d.abstained]
    assert np.mean(kept) > 0.95

def _labeling_model(means):
    k = len(means)
    return GmmModel(
        weights=np.full(k, 1.0 / k),
        means=np.asarray(means, dtype=np.float64),
        covariances=np.repeat(np.eye(2)[np.newaxis], k, axis=0),
    )


def test_cluster_ties_go_to_the_earlier_class(caplog):
    model = _labeling_model([[0.0, 0.0], [10.0, 0.0]])
    near_origin = np.random.default_rng(0).normal(0.0, 0.1, size=(10, 2))
    x = np.vstack([near_origin, [[10.0, 0.1], [10.1, 0.0], [9.9, 0.0]]])
    labels = ["A"] * 5 + ["B"] * 5 + ["A"] * 3
    with caplog.at_level(logging.WARNING, logger="confidence.clusters"):
        labeled = assign_cluster_labels(model, x, labels, ["B", "A"])
    assert labeled.cluster_labels == ("B", "A")
    assert "ties" in caplog.text


def test_empty_cluster_takes_the_nearest_label(caplog):
    model = _labeling_model([[0.0, 0.0], [10.0, 0.0], [100.0, 0.0]])
    x = np.array([[0.0, 0.1], [0.1, 0.0], [10.0, 0.1], [10.1, 0.0]])
    with caplog.at_level(logging.WARNING, logger="confidence.clusters"):
        labeled = assign_cluster_labels(model, x, ["A", "A", "B", "B"], ["A", "B"])
    assert labeled.cluster_labels == ("A", "B", "B")
    assert "empty" in caplog.text


def test_zero_vectors_have_no_similarity():
    centroids = CentroidSet(names=("A", "B"), vectors=np.eye(2))
    np.testing.assert_allclose(similarity_vector(np.array([1.0, 1.0]) / np.sqrt(2), centroids), [0.7071, 0.7071], atol=1e-4)
    with pytest.raises(NumericalError):
        similarity_vector(np.zeros(2), centroids)
    with pytest.raises(NumericalError):
        CentroidSet(names=("A", "B"), vectors=np.array([[1.0, 0.0], [0.0, 0.0]]))


def _two_blob_model():
    names = ["A", "B"]
    means = orthogonal_means(2, 16)
    train = generate_embeddings(means, spread=0.05, n_per_class=200, seed=1, class_names=names)
    test = generate_embeddings(means, spread=0.05, n_per_class=200, outlier_fraction=0.2, seed=2, class_names=names)
    model = fit_confidence_model(train, names, cfg=EmConfig(seed=1))
    return model, test


def test_two_orthogonal_blobs_are_recovered_at_the_lowest_threshold():
    model, test = _two_blob_model()
    known = [label != BACKGROUND for label in test.labels]
    x = model_inputs(model, test.vectors[known])
    labels = [label for label in test.labels if label != BACKGROUND]

    # no threshold: every sample is decided
    plain = classify_gmm_batch(model, x, threshold=-np.inf)
    assert np.mean([d.predicted == label for d, label in zip(plain, labels)]) >= 0.99

    # p = 0: samples below the lowest training log-likelihood abstain and are
    # left out of the agreement, as under the exclude policy
    decisions = classify_gmm_batch(calibrate_threshold(model, None, 0.0), x)
    decided = [(d, label) for d, label in zip(decisions, labels) if not d.abstained]
    assert len(decided) >= 0.95 * len(labels)
    assert np.mean([d.predicted == label for d, label in decided]) >= 0.99


def test_two_blob_outliers_abstain_at_the_fifth_percentile():
    model, test = _two_blob_model()
    decisions = classify_gmm_batch(calibrate_threshold(model, None, 5.0), model_inputs(model, test.vectors))
    outlier = [d.abstained for d, label in zip(decisions, test.labels) if label == BACKGROUND]
    assert len(outlier) == 40
    assert np.mean(outlier) >= 0.9


def test_scaling_an_embedding_keeps_its_decision():
    model, test = _two_blob_model()
    model = calibrate_threshold(model, None, 5.0)
    base = classify_gmm_batch(model, model_inputs(model, test.vectors))
    for scale in (1e-3, 3.0, 1e6):
        scaled = test.vectors * scale
        np.testing.assert_allclose(
            model_inputs(model, scaled), model_inputs(model, test.vectors), rtol=0, atol=1e-12
        )
        again = classify_gmm_batch(model, model_inputs(model, scaled))
        assert [d.predicted for d in again] == [d.predicted for d in base]
        np.testing.assert_allclose([d.score for d in again], [d.score for d in base], rtol=1e-9)



# =============================================================================
# PERSISTENCE
# =============================================================================

def test_saved_model_scores_identically(tmp_path):
    x, labels = _blobs(seed=11)
    model = calibrate_threshold(assign_cluster_labels(fit_gmm(x, 3, EmConfig(seed=11), feature_space=EMBEDDING), x, labels, ["A", "B", "C"]), x, 5.0)
    path = tmp_path / "gmm.json"
    save_gmm(path, model)
    loaded = load_gmm(path)
    np.testing.assert_array_equal(loaded.weights, model.weights)
    np.testing.assert_allclose(loglik_batch(loaded, x), loglik_batch(model, x), rtol=0, atol=0)
    assert loaded.cluster_labels == model.cluster_labels
    assert loaded.threshold == model.threshold


def test_decision_file_keeps_abstentions(tmp_path):
    x, labels = _blobs(seed=12, per_blob=10)
    model = calibrate_threshold(assign_cluster_labels(fit_gmm(x, 3, EmConfig(seed=12)), x, labels, ["A", "B", "C"]), x, 10.0)
    decisions = classify_gmm_batch(model, x)
    path = tmp_path / "decisions.csv"
    write_decisions(path, labels, decisions)
    read_labels, read_back = read_decisions(path)
    assert read_labels == labels
    assert [d.predicted for d in read_back] == [d.predicted for d in decisions]
    assert [d.cluster for d in read_back] == [d.cluster for d in decisions]
