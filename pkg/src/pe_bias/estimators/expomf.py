"""Exposure matrix factorization adapted to graded topic ratings.

Each cell carries a latent exposure bit a[u, t] ~ Bernoulli(mu[t]). An exposed
cell emits a Gaussian rating around theta[u] . beta[t]; an unexposed cell is
never observed. Unobserved cells therefore enter the M-step with target 0 and
weight equal to their exposure posterior gamma.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..core import RATING_MAX, RATING_MIN, TopicInteractionTable
from ..errors import EmptyInput, SingularSystem
from .mf import TrainConfig

log = logging.getLogger(__name__)

_MU_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class ExpoMfModel:
    user_factors: np.ndarray
    topic_factors: np.ndarray
    exposure_prior: np.ndarray
    lam_y: float
    exposure_posterior: np.ndarray
    user_ids: tuple = ()
    objective_trace: list = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "_index", {u: i for i, u in enumerate(self.user_ids)})

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def num_topics(self) -> int:
        return self.topic_factors.shape[0]

    def predict(self, users, topics, clamp: bool = True) -> np.ndarray:
        topics = np.asarray(topics, dtype=np.int64)
        rows = np.fromiter((self._index.get(u, -1) for u in users), np.int64, len(topics))
        ok = (rows >= 0) & (topics >= 0) & (topics < self.num_topics)
        dot = np.einsum(
            "ij,ij->i",
            self.user_factors[np.where(ok, rows, 0)],
            self.topic_factors[np.where(ok, topics, 0)],
        )
        pred = np.where(ok, dot, 0.0)
        return np.clip(pred, RATING_MIN, RATING_MAX) if clamp else pred

    def predict_table(self, table: TopicInteractionTable, clamp: bool = True) -> np.ndarray:
        return self.predict(table.users.tolist(), table.topics, clamp=clamp)

    def predict_matrix(self, clamp: bool = True) -> np.ndarray:
        full = self.user_factors @ self.topic_factors.T
        return np.clip(full, RATING_MIN, RATING_MAX) if clamp else full


def _log_normal(x, mean, lam_y):
    return 0.5 * math.log(lam_y / (2.0 * math.pi)) - 0.5 * lam_y * (x - mean) ** 2


def exposure_posterior(scores, observed, mu, lam_y) -> np.ndarray:
    """E-step: gamma = 1 on observed cells, Bayes posterior of exposure elsewhere."""
    log_expo = np.log(np.maximum(mu, _MU_FLOOR))[None, :] + _log_normal(0.0, scores, lam_y)
    log_unexpo = np.log1p(-np.minimum(mu, 1.0 - 1e-16))[None, :] * np.ones_like(scores)
    with np.errstate(divide="ignore"):
        gamma = np.exp(log_expo - np.logaddexp(log_expo, log_unexpo))
    gamma = np.where(mu[None, :] <= 0.0, 0.0, gamma)
    return np.where(observed, 1.0, gamma)


def log_posterior(theta, beta, mu, lam_y, reg, Y, observed) -> float:
    """Marginal log-likelihood (exposures summed out) plus the Gaussian factor priors."""
    scores = theta @ beta.T
    mu_c = np.clip(mu, _MU_FLOOR, 1.0)[None, :]
    obs_term = np.log(mu_c) + _log_normal(Y, scores, lam_y)
    with np.errstate(divide="ignore"):
        unobs_term = np.logaddexp(
            np.log(mu_c) + _log_normal(0.0, scores, lam_y),
            np.log1p(-np.minimum(mu_c, 1.0)),
        )
    total = np.sum(np.where(observed, obs_term, unobs_term))
    return float(total - 0.5 * reg * (np.vdot(theta, theta) + np.vdot(beta, beta)))


def _ridge_rows(fixed, targets, gamma, lam_y, reg):
    """Solve, for every row r, (lam_y F' G_r F + reg I) x_r = lam_y F' G_r y_r."""
    d = fixed.shape[1]
    outer = (fixed[:, :, None] * fixed[:, None, :]).reshape(len(fixed), d * d)
    A = lam_y * (gamma @ outer).reshape(-1, d, d)
    b = lam_y * (gamma * targets) @ fixed
    ridge = reg
    for attempt in range(4):
        try:
            sol = np.linalg.solve(A + ridge * np.eye(d)[None], b[..., None])[..., 0]
            if np.all(np.isfinite(sol)):
                return sol
        except np.linalg.LinAlgError:
            pass
        if attempt == 3:
            break
        ridge = max(ridge, 1e-8) * 10.0
        log.debug("ridge system singular; retrying with ridge %g", ridge)
    raise SingularSystem(f"ridge system singular even with ridge {ridge:g}")


def train_expomf(
    train: TopicInteractionTable,
    config: TrainConfig,
    num_topics: int | None = None,
    max_iters: int = 20,
    tol: float = 1e-5,
    lam_y: float = 1.0,
    init_mu: float | None = None,
) -> ExpoMfModel:
    """Fit by generalized EM; ``objective_trace`` holds the log posterior after each sweep."""
    if len(train) == 0:
        raise EmptyInput("training table is empty")
    user_ids = train.user_list()
    uindex = {u: i for i, u in enumerate(user_ids)}
    rows = train.user_indices(uindex)
    n_topics = int(num_topics if num_topics is not None else train.topics.max() + 1)
    n_users = len(user_ids)

    observed = np.zeros((n_users, n_topics), dtype=bool)
    observed[rows, train.topics] = True
    Y = np.zeros((n_users, n_topics))
    Y[rows, train.topics] = train.ratings

    rng = np.random.default_rng([config.seed, 3])
    theta = 0.01 * rng.standard_normal((n_users, config.dim))
    beta = 0.01 * rng.standard_normal((n_topics, config.dim))
    density = len(train) / (n_users * n_topics)
    mu = np.full(n_topics, density if init_mu is None else init_mu)
    reg = config.reg

    trace = [log_posterior(theta, beta, mu, lam_y, reg, Y, observed)]
    gamma = exposure_posterior(theta @ beta.T, observed, mu, lam_y)
    for it in range(max_iters):
        theta = _ridge_rows(beta, Y, gamma, lam_y, reg)
        gamma = exposure_posterior(theta @ beta.T, observed, mu, lam_y)
        beta = _ridge_rows(theta, Y.T, gamma.T, lam_y, reg)
        gamma = exposure_posterior(theta @ beta.T, observed, mu, lam_y)
        mu = np.clip(gamma.mean(axis=0), 0.0, 1.0)
        gamma = exposure_posterior(theta @ beta.T, observed, mu, lam_y)
        trace.append(log_posterior(theta, beta, mu, lam_y, reg, Y, observed))
        change = abs(trace[-1] - trace[-2]) / max(abs(trace[-2]), 1e-12)
        log.debug("expomf iter %d objective %.6f", it + 1, trace[-1])
        if change < tol:
            break
    return ExpoMfModel(theta, beta, mu, lam_y, gamma, tuple(user_ids), trace)
