import numpy as np
import pytest

from ingest.records import BACKGROUND, Direction
from ingest.sessions import TEST, split_sessions
from synth.embeddings import OUTLIER_SESSION, generate_embeddings, orthogonal_means
from synth.flows import generate_flows, held_out_session_count, truncated_mean
from synth.profiles import MAX_SIZE, MIN_SIZE, load_profiles, profiles_from_dict
from utils.errors import ConfigurationError


@pytest.fixture(scope="module")
def profiles():
    return load_profiles()


@pytest.fixture(scope="module")
def corpus(profiles):
    return generate_flows(profiles, sessions_per_class=5, flows_per_session=20, seed=11)


# =============================================================================
# FLOW CORPUS
# =============================================================================

def test_corpus_has_every_class_and_session(profiles, corpus):
    assert len(profiles.class_names) == 10
    assert len(corpus.flows) == 10 * 5 * 20
    counts = {}
    for flow in corpus.flows:
        counts[flow.label] = counts.get(flow.label, 0) + 1
    assert counts == {name: 100 for name in profiles.class_names}
    assert all(len(flow) >= 40 for flow in corpus.flows)
    assert all(MIN_SIZE <= p.size <= MAX_SIZE for flow in corpus.flows for p in flow.packets)


def test_generation_is_deterministic_for_a_seed(profiles, corpus):
    again = generate_flows(profiles, sessions_per_class=5, flows_per_session=20, seed=11)
    assert again.flows == corpus.flows
    assert again.assignment == corpus.assignment
    other = generate_flows(profiles, sessions_per_class=5, flows_per_session=20, seed=12)
    assert other.flows != corpus.flows


def test_sizes_follow_the_truncated_profile(profiles, corpus):
    for profile in profiles.classes:
        sizes = np.array([
            p.size
            for flow in corpus.flows
            if flow.session_type == profile.name
            for p in flow.packets
            if p.direction == Direction.SERVER_TO_CLIENT
        ])
        assert len(sizes) > 0
        expected = truncated_mean(profile.s2c_size)
        tolerance = 4 * profile.s2c_size.std / np.sqrt(len(sizes)) + 0.5
        assert abs(sizes.mean() - expected) <= tolerance, profile.name


def test_held_out_background_only_appears_in_test_sessions(profiles, corpus):
    assert held_out_session_count(5, 0.3) == 2
    assert held_out_session_count(1, 0.3) == 0
    train, test = split_sessions(corpus.flows, corpus.assignment)
    assert sum(v == TEST for v in corpus.assignment.values()) == 20

    held_out_nets = {
        len(profiles.classes) + i for i, p in enumerate(profiles.background) if p.held_out
    }

    def net(flow):
        return int(flow.key.server_addr.split(".")[2])

    background_train = [f for f in train if f.label == BACKGROUND]
    background_test = [f for f in test if f.label == BACKGROUND]
    assert background_train and background_test
    assert not any(net(f) in held_out_nets for f in background_train)
    assert all(net(f) in held_out_nets for f in background_test)


def test_background_share_mixes_background_into_application_sessions(profiles):
    corpus = generate_flows(profiles, sessions_per_class=2, flows_per_session=40, seed=3, background_share=0.5)
    video = [f for f in corpus.flows if f.session_type == "Video"]
    labels = {f.label for f in video}
    assert labels == {"Video", BACKGROUND}


def test_generator_arguments_are_checked(profiles):
    with pytest.raises(ConfigurationError):
        generate_flows(profiles, sessions_per_class=0)
    with pytest.raises(ConfigurationError):
        generate_flows(profiles, test_fraction=1.0)
    with pytest.raises(ConfigurationError):
        generate_flows(profiles, background_share=1.0)


def test_profile_documents_are_validated():
    profile = {
        "name": "A",
        "domains": ["a.example"],
        "c2s_size": {"mean": 100, "std": 10},
        "s2c_size": {"mean": 900, "std": 50},
        "inter_arrival": 0.01,
        "switch_prob": 0.2,
        "length": {"min": 40, "max": 50},
    }
    assert profiles_from_dict({"classes": [profile]}).class_names == ["A"]
    with pytest.raises(ConfigurationError):
        profiles_from_dict({"classes": [profile, profile]})
    with pytest.raises(ConfigurationError):
        profiles_from_dict({"classes": [dict(profile, length={"min": 10, "max": 50})]})
    with pytest.raises(ConfigurationError):
        profiles_from_dict({"classes": [dict(profile, c2s_size={"mean": 100, "std": 0})]})
    with pytest.raises(ConfigurationError):
        profiles_from_dict({"schema_version": 2, "classes": [profile]})
    with pytest.raises(ConfigurationError):
        load_profiles("/nonexistent/profiles.json")


# =============================================================================
# EMBEDDINGS
# =============================================================================

def test_tiny_spread_collapses_onto_the_means():
    means = orthogonal_means(4, 8)
    embeddings = generate_embeddings(means, spread=1e-12, n_per_class=5, seed=0)
    expected = np.repeat(means, 5, axis=0)
    np.testing.assert_allclose(embeddings.vectors, expected, atol=1e-9)
    assert embeddings.labels[:5] == ["class0"] * 5


def test_outliers_are_orthogonal_unit_vectors():
    means = orthogonal_means(3, 16)
    embeddings = generate_embeddings(means, spread=0.1, n_per_class=20, outlier_fraction=0.5, seed=1)
    outliers = embeddings.vectors[[label == BACKGROUND for label in embeddings.labels]]
    assert outliers.shape == (10, 16)
    np.testing.assert_allclose(np.linalg.norm(outliers, axis=1), 1.0)
    assert np.abs(outliers @ means.T).max() < 1e-10
    assert embeddings.session_ids.count(OUTLIER_SESSION) == 10


def test_embedding_arguments_are_checked():
    with pytest.raises(ConfigurationError):
        orthogonal_means(5, 4)
    with pytest.raises(ConfigurationError):
        generate_embeddings(orthogonal_means(2, 4), spread=0.0, n_per_class=3)
    with pytest.raises(ConfigurationError):
        generate_embeddings(orthogonal_means(4, 4), spread=0.1, n_per_class=3, outlier_fraction=0.5)
    with pytest.raises(ConfigurationError):
        generate_embeddings(orthogonal_means(2, 4), spread=0.1, n_per_class=3, class_names=["A"])
