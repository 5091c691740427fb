"""
Confidence: centroid similarity vectors, GMM abstention and the softmax baseline.
"""

from confidence.centroids import CentroidSet, compute_centroids, similarity_matrix, similarity_vector
from confidence.clusters import assign_cluster_labels, cluster_composition, hard_assignments
from confidence.decisions import (
    Decision,
    classify_gmm,
    classify_gmm_batch,
    classify_softmax,
    classify_softmax_batch,
    model_inputs,
)
from confidence.gmm import (
    COSINE,
    EMBEDDING,
    EmConfig,
    GmmModel,
    calibrate_threshold,
    fit_gmm,
    loglik,
    loglik_batch,
    posterior,
    threshold_at_percentile,
)
from confidence.persistence import load_gmm, read_decisions, save_gmm, write_decisions
