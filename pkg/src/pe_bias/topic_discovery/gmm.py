"""Diagonal-covariance Gaussian mixture fitted by EM, and hard topic assignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..core import TopicAssignment
from ..errors import ConfigError

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
MIN_WEIGHT = 1e-8


@dataclass(frozen=True, eq=False)
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    trace: list = field(default_factory=list)
    reseeded_at: list = field(default_factory=list)

    @property
    def num_components(self) -> int:
        return len(self.weights)


def component_log_density(X, means, variances) -> np.ndarray:
    """log N(x_n | mu_k, diag(var_k)) as an (n, K) array."""
    inv = 1.0 / variances
    quad = (
        (X * X) @ inv.T
        - 2.0 * X @ (means * inv).T
        + np.sum(means * means * inv, axis=1)[None, :]
    )
    log_det = np.sum(np.log(variances), axis=1)
    return -0.5 * (X.shape[1] * np.log(2.0 * np.pi) + log_det[None, :] + np.maximum(quad, 0.0))


def _kmeans_pp(X, K, rng) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2) / total, rng.random(), side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _e_step(X, weights, means, variances):
    with np.errstate(divide="ignore"):
        joint = np.log(weights)[None, :] + component_log_density(X, means, variances)
    norm = logsumexp(joint, axis=1)
    return float(norm.sum()), np.exp(joint - norm[:, None])


def fit_gmm(
    vectors, K: int, max_iters: int = 200, tol: float = 1e-6, seed: int = 0
) -> GmmParams:
    """EM from k-means++ seeded means; stops when the log-likelihood gain drops below ``tol``.

    A component whose weight falls below 1e-8 is re-seeded at the point
    farthest from its nearest mean; the iteration index is kept in
    ``reseeded_at`` since the likelihood may dip there.
    """
    X = np.asarray(vectors, dtype=np.float64)
    n, D = X.shape
    if K < 1 or K > n:
        raise ConfigError(f"K={K} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    global_var = np.maximum(X.var(axis=0), VAR_FLOOR)
    means = _kmeans_pp(X, K, rng)
    variances = np.tile(global_var, (K, 1))
    weights = np.full(K, 1.0 / K)

    ll, resp = _e_step(X, weights, means, variances)
    trace = [ll]
    reseeded = []
    for it in range(max_iters):
        nk = resp.sum(axis=0)
        weights = nk / n
        safe = np.maximum(nk, 1e-300)[:, None]
        means = (resp.T @ X) / safe
        variances = np.empty((K, D))
        for k in range(K):
            diff = X - means[k]
            variances[k] = resp[:, k] @ (diff * diff) / safe[k]
        variances = np.maximum(variances, VAR_FLOOR)

        dead = np.flatnonzero(weights < MIN_WEIGHT)
        if len(dead):
            for k in dead:
                alive = np.setdiff1d(np.arange(K), dead)
                dist = np.min(
                    np.sum((X[:, None, :] - means[None, alive, :]) ** 2, axis=2), axis=1
                ) if len(alive) else np.zeros(n)
                means[k] = X[int(np.argmax(dist))]
                variances[k] = global_var
                weights[k] = 1.0 / n
            weights /= weights.sum()
            reseeded.append(it + 1)
            log.debug("re-seeded components %s at iteration %d", dead.tolist(), it + 1)

        ll, resp = _e_step(X, weights, means, variances)
        gain = ll - trace[-1]
        trace.append(ll)
        if len(dead) == 0 and gain < tol:
            break
    return GmmParams(weights, means, variances, ll, trace, reseeded)


def assign_topics(gmm: GmmParams, item_vectors, item_ids) -> TopicAssignment:
    """Hard assignment to the most responsible component; empty components are dropped
    and the remaining ids re-densified in component order. Ties go to the lowest index."""
    X = np.asarray(item_vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != gmm.means.shape[1]:
        raise ValueError("item vectors do not match the mixture dimension")
    with np.errstate(divide="ignore"):
        joint = np.log(gmm.weights)[None, :] + component_log_density(X, gmm.means, gmm.variances)
    best = np.argmax(joint, axis=1)
    used = np.unique(best)
    dense = {int(k): t for t, k in enumerate(used)}
    return TopicAssignment({str(i): {dense[int(k)]} for i, k in zip(item_ids, best)})
