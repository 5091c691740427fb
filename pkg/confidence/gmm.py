"""
Gaussian mixture model fitted with EM, and log-likelihood thresholds.

Covariances are full. Two ridge modes are available:

- "prior" (default): a fixed prior on each covariance. The M-step sets
  Sigma_k = S_k + lambda/N_k * I with lambda = eps * N / K, so a component
  holding its equal share of the data gets exactly eps * I (for K = 1,
  Sigma = S + eps * I) while a component holding little data gets a
  proportionally larger ridge. EM ascends the log-likelihood plus the
  log-prior -lambda/2 * sum_k tr(Sigma_k^-1); that objective is what `history`
  records and it never decreases between component re-seeds.
- "fixed": Sigma_k = S_k + eps * I for every component whatever its share.
  `history` records the plain log-likelihood, which is not guaranteed to be
  monotone in this mode.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from confidence.centroids import CentroidSet
from utils.errors import ConfigurationError, DataError, NumericalError

logger = logging.getLogger(__name__)

COSINE = "cosine"
EMBEDDING = "embedding"
FEATURE_SPACES = (COSINE, EMBEDDING)

COLLAPSE_WEIGHT = 1e-8

RIDGE_PRIOR = "prior"
RIDGE_FIXED = "fixed"
RIDGE_MODES = (RIDGE_PRIOR, RIDGE_FIXED)


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 200
    tol: float = 1e-6
    cov_regularization: float = 1e-6
    seed: int = 0
    ridge_mode: str = RIDGE_PRIOR

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")
        if self.tol < 0:
            raise ConfigurationError("tol must be non-negative")
        if self.cov_regularization <= 0:
            raise ConfigurationError("cov_regularization must be positive")
        if self.ridge_mode not in RIDGE_MODES:
            raise ConfigurationError(f"ridge_mode must be one of {RIDGE_MODES}, got '{self.ridge_mode}'")


@dataclass
class GmmModel:
    """
    Fitted mixture.

    cluster_labels, threshold and centroids are filled in by later steps:
    assign_cluster_labels, calibrate_threshold and the pipeline (for
    classification from raw embeddings).
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    feature_space: str = COSINE
    ridge: float = 0.0
    cluster_labels: Optional[Tuple[str, ...]] = None
    threshold: Optional[float] = None
    percentile: Optional[float] = None
    centroids: Optional[CentroidSet] = None
    train_logliks: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.covariances.shape != (k, d, d):
            raise DataError("GMM parameter shapes are inconsistent")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights <= 0):
            raise DataError("GMM weights must be positive and sum to 1")
        if self.feature_space not in FEATURE_SPACES:
            raise DataError(f"Unknown feature space '{self.feature_space}'")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def cholesky_factors(self) -> np.ndarray:
        return _cholesky_all(self.covariances)


def _cholesky_all(covariances: np.ndarray) -> np.ndarray:
    factors = np.empty_like(covariances)
    for k, sigma in enumerate(covariances):
        try:
            factors[k] = scipy.linalg.cholesky(sigma, lower=True)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"Covariance of component {k} is not positive definite") from e
    return factors


def _log_gaussian(x: np.ndarray, means: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """(N, K) log N(x_i; mu_k, Sigma_k) from Cholesky factors of the covariances."""
    n, d = x.shape
    out = np.empty((n, len(means)))
    for k, (mu, chol) in enumerate(zip(means, factors)):
        # Mahalanobis term via L^-1 (x - mu)
        solved = scipy.linalg.solve_triangular(chol, (x - mu).T, lower=True)
        out[:, k] = (
            -0.5 * d * np.log(2 * np.pi)
            - np.sum(np.log(np.diag(chol)))
            - 0.5 * np.sum(solved**2, axis=0)
        )
    return out


def _log_joint(model_weights: np.ndarray, means: np.ndarray, factors: np.ndarray, x: np.ndarray) -> np.ndarray:
    return _log_gaussian(x, means, factors) + np.log(model_weights)


def _check_vectors(model: GmmModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.dim:
        raise DataError(f"Expected {model.dim}-dim vectors, got {x.shape[1]}")
    return x


def loglik_batch(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """log sum_k pi_k N(x_i; mu_k, Sigma_k) for every row, via log-sum-exp."""
    x = _check_vectors(model, x)
    return logsumexp(_log_joint(model.weights, model.means, model.cholesky_factors(), x), axis=1)


def loglik(model: GmmModel, x: np.ndarray) -> float:
    return float(loglik_batch(model, np.asarray(x)[np.newaxis])[0])


def posterior(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """(N, K) responsibilities; every row sums to 1."""
    x = _check_vectors(model, x)
    joint = _log_joint(model.weights, model.means, model.cholesky_factors(), x)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def _ridge_penalty(factors: np.ndarray, ridge: float) -> float:
    """-ridge/2 * sum_k tr(Sigma_k^-1), using tr(Sigma^-1) = ||L^-1||_F^2."""
    eye = np.eye(factors.shape[1])
    total = 0.0
    for chol in factors:
        inv = scipy.linalg.solve_triangular(chol, eye, lower=True)
        total += float(np.sum(inv**2))
    return -0.5 * ridge * total


def _global_covariance(x: np.ndarray, eps: float) -> np.ndarray:
    centered = x - x.mean(axis=0)
    return centered.T @ centered / len(x) + eps * np.eye(x.shape[1])


def fit_gmm(
    train_vectors: np.ndarray,
    k: int,
    cfg: EmConfig = EmConfig(),
    feature_space: str = COSINE,
) -> GmmModel:
    """
    Fit a K-component full-covariance GMM with EM.

    Initialisation: k-means++ seeding of the means, every covariance set to
    the global covariance plus eps * I, equal weights. Iteration stops when
    the recorded objective improves by less than `tol` or after `max_iters`
    M-steps. In the default "prior" ridge mode each M-step adds
    eps * N / (K * N_k) * I to component k, which equals eps * I only for a
    component holding N / K samples; near-collapsed components get a much
    larger ridge. `cfg.ridge_mode = "fixed"` adds eps * I to every component.
    A component whose weight drops below 1e-8 is re-seeded at a random
    training point with a warning.

    Args:
        train_vectors: (N, D) training vectors.
        k: Number of components.
        cfg: EM settings.
        feature_space: Recorded on the model ("cosine" or "embedding").

    Returns:
        Unlabeled, uncalibrated model whose metadata holds the objective
        history and the training log-likelihoods.

    Raises:
        ConfigurationError: If K < 1 or K > N.
        DataError: On non-finite input.
    """
    x = np.asarray(train_vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise DataError("fit_gmm needs a non-empty (N, D) array")
    if not np.isfinite(x).all():
        raise DataError("Training vectors must be finite")
    n, d = x.shape
    if k < 1 or k > n:
        raise ConfigurationError(f"K must satisfy 1 <= K <= N (K={k}, N={n})")

    eps = cfg.cov_regularization
    # prior strength; the fixed mode carries no penalty term
    ridge = eps * n / k if cfg.ridge_mode == RIDGE_PRIOR else 0.0
    rng = np.random.default_rng(cfg.seed)
    global_cov = _global_covariance(x, eps)

    means, _ = kmeans_plusplus(x, n_clusters=k, random_state=cfg.seed)
    means = means.astype(np.float64)
    covariances = np.repeat(global_cov[np.newaxis], k, axis=0)
    weights = np.full(k, 1.0 / k)

    factors = _cholesky_all(covariances)
    joint = _log_joint(weights, means, factors, x)
    objective = float(np.sum(logsumexp(joint, axis=1))) + _ridge_penalty(factors, ridge)
    history: List[float] = [objective]
    reseeds: List[Tuple[int, int]] = []
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iters + 1):
        # E-step
        resp = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        nk = resp.sum(axis=0)

        # M-step
        weights = nk / n
        collapsed = weights < COLLAPSE_WEIGHT
        for j in np.flatnonzero(~collapsed):
            means[j] = resp[:, j] @ x / nk[j]
            centered = x - means[j]
            scatter = (resp[:, j, np.newaxis] * centered).T @ centered / nk[j]
            added = ridge / nk[j] if cfg.ridge_mode == RIDGE_PRIOR else eps
            sigma = scatter + added * np.eye(d)
            covariances[j] = 0.5 * (sigma + sigma.T)
        for j in np.flatnonzero(collapsed):
            point = int(rng.integers(n))
            logger.warning("GMM component %d collapsed at iteration %d; re-seeded at sample %d", j, iteration, point)
            means[j] = x[point]
            covariances[j] = global_cov
            weights[j] = 1.0 / k
            reseeds.append((iteration, int(j)))
        weights = weights / weights.sum()

        factors = _cholesky_all(covariances)
        joint = _log_joint(weights, means, factors, x)
        new_objective = float(np.sum(logsumexp(joint, axis=1))) + _ridge_penalty(factors, ridge)
        history.append(new_objective)
        improvement = new_objective - objective
        objective = new_objective
        if collapsed.any():
            continue
        if improvement < cfg.tol:
            converged = True
            break

    if not converged:
        logger.warning("EM stopped after %d iterations without reaching tol=%g", cfg.max_iters, cfg.tol)
    logger.info("Fitted %d-component GMM on %d x %d vectors in %d iterations", k, n, d, iteration)

    train_logliks = logsumexp(joint, axis=1)
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covariances,
        feature_space=feature_space,
        ridge=ridge,
        train_logliks=train_logliks,
        metadata={
            "seed": cfg.seed,
            "iterations": iteration,
            "converged": converged,
            "final_objective": objective,
            "final_loglik": float(train_logliks.sum()),
            "history": history,
            "reseeds": reseeds,
            "max_iters": cfg.max_iters,
            "tol": cfg.tol,
            "cov_regularization": eps,
            "ridge_mode": cfg.ridge_mode,
        },
    )


def percentile_index(p: float, n: int) -> int:
    """floor(p * n / 100) evaluated on the decimal value of p."""
    return math.floor(Fraction(repr(float(p))) * n / 100)


def threshold_at_percentile(logliks: np.ndarray, p: float) -> float:
    """
    Lower-value percentile: the m-th smallest value with m = floor(p * N / 100),
    so exactly m training values lie strictly below it when values are
    distinct. p = 100 returns the next float above the maximum.
    """
    if not 0.0 <= p <= 100.0:
        raise ConfigurationError(f"Percentile must lie in [0, 100], got {p}")
    values = np.sort(np.asarray(logliks, dtype=np.float64))
    if len(values) == 0:
        raise DataError("Cannot calibrate a threshold on an empty training set")
    m = percentile_index(p, len(values))
    if m >= len(values):
        return float(np.nextafter(values[-1], np.inf))
    return float(values[m])


def calibrate_threshold(model: GmmModel, train_vectors: Optional[np.ndarray], p: float) -> GmmModel:
    """
    Set the abstention threshold at the p-th percentile of training log-likelihoods.

    With train_vectors None the log-likelihoods stored at fit time are used.
    """
    if train_vectors is not None:
        logliks = loglik_batch(model, train_vectors)
    elif model.train_logliks is not None:
        logliks = model.train_logliks
    else:
        raise DataError("No training vectors or stored training log-likelihoods to calibrate on")
    threshold = threshold_at_percentile(logliks, p)
    logger.info("Calibrated threshold %.6f at percentile %g (%d training samples)", threshold, p, len(logliks))
    return replace(model, threshold=threshold, percentile=float(p), train_logliks=np.asarray(logliks))
