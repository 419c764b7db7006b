"""Topic-level preference-elicitation data from item ratings, plus propensity estimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .core import (
    NUM_LEVELS,
    RHO_MIN,
    InteractionTable,
    PerCellPropensity,
    PerLevelPropensity,
    TopicAssignment,
    TopicInteractionTable,
)
from .errors import ConfigError, DegenerateLabels, EmptyInput, MissingTopicError

log = logging.getLogger(__name__)


def aggregate_to_topics(
    interactions: InteractionTable, topics: TopicAssignment
) -> TopicInteractionTable:
    """Mean item rating per (user, topic); items in several topics count toward each."""
    sums: dict[tuple, float] = {}
    counts: dict[tuple, int] = {}
    for user, item, rating in interactions:
        try:
            item_topics = topics[item]
        except KeyError:
            raise MissingTopicError(item) from None
        for t in item_topics:
            key = (user, t)
            sums[key] = sums.get(key, 0.0) + rating
            counts[key] = counts.get(key, 0) + 1
    if not sums:
        return TopicInteractionTable.empty()
    keys = list(sums)
    table = TopicInteractionTable(
        [u for u, _ in keys], [t for _, t in keys], [sums[k] / counts[k] for k in keys]
    )
    return table.sorted()


def topic_rating_counts(interactions: InteractionTable, topics: TopicAssignment) -> dict[int, int]:
    counts: dict[int, int] = {}
    for item in interactions.items.tolist():
        if item not in topics:
            raise MissingTopicError(item)
        for t in topics[item]:
            counts[t] = counts.get(t, 0) + 1
    return counts


def level_distribution(table: TopicInteractionTable, smoothing: float = 0.0) -> np.ndarray:
    """Probability of each level 1..5 (index 0..4), with optional add-k smoothing."""
    counts = np.bincount(table.levels - 1, minlength=NUM_LEVELS).astype(np.float64)
    return (counts + smoothing) / (counts.sum() + smoothing * NUM_LEVELS)


def nb_propensity_values(
    biased: TopicInteractionTable, unbiased_sample: TopicInteractionTable, num_cells: int
) -> tuple[np.ndarray, np.ndarray, float]:
    """Unclipped per-level propensities, the smoothed MCAR level marginal and P(O=1)."""
    if len(biased) == 0 or len(unbiased_sample) == 0:
        raise EmptyInput("both the biased log and the MCAR sample must be non-empty")
    if num_cells <= len(biased):
        raise ConfigError(f"num_cells={num_cells} must exceed the {len(biased)} observed cells")
    p_level_given_obs = level_distribution(biased)
    p_level = level_distribution(unbiased_sample, smoothing=1.0)
    p_obs = len(biased) / num_cells
    return p_level_given_obs * p_obs / p_level, p_level, p_obs


def estimate_propensities_nb(
    biased: TopicInteractionTable,
    unbiased_sample: TopicInteractionTable,
    num_cells: int,
    rho_min: float = RHO_MIN,
) -> PerLevelPropensity:
    """Rating-stratified propensities via Bayes' rule: P(r | O) P(O) / P(r)."""
    rho, _, _ = nb_propensity_values(biased, unbiased_sample, num_cells)
    return PerLevelPropensity({lvl: rho[lvl - 1] for lvl in range(1, NUM_LEVELS + 1)}, rho_min)


@dataclass(frozen=True, eq=False)
class ItemPropensities:
    """Per-(user, item) observation probabilities as a dense matrix."""

    matrix: np.ndarray
    user_ids: tuple
    item_ids: tuple

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (len(self.user_ids), len(self.item_ids)):
            raise ValueError("matrix shape does not match the id lists")
        if np.any(m <= 0) or np.any(m > 1):
            raise ValueError("item propensities must lie in (0, 1]")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))


def lift_item_propensities_to_topics(
    item_props: ItemPropensities,
    topics: TopicAssignment,
    num_topics: int | None = None,
    rho_min: float = RHO_MIN,
) -> PerCellPropensity:
    """P(at least one item of the topic is observed) = 1 - prod(1 - rho_ui)."""
    n_topics = num_topics if num_topics is not None else topics.num_topics
    membership = np.zeros((len(item_props.item_ids), n_topics))
    for j, item in enumerate(item_props.item_ids):
        for t in topics.topics_of.get(item, ()):
            if t < n_topics:
                membership[j, t] = 1.0
    empty = np.flatnonzero(membership.sum(axis=0) == 0)
    if len(empty):
        log.warning("topics without items are skipped (rho floored): %s", empty.tolist()[:20])
    with np.errstate(divide="ignore"):
        log_miss = np.maximum(np.log1p(-item_props.matrix), -1e6)
    rho = -np.expm1(log_miss @ membership)
    return PerCellPropensity(rho, item_props.user_ids, rho_min=rho_min)


# -- logistic-regression propensities -----------------------------------------


def _fit_logistic(X, pos, neg, l2):
    """Binomial logistic regression on per-row success/failure counts; intercept unpenalized."""
    n_feat = X.shape[1]
    total = pos.sum() + neg.sum()

    def objective(w):
        z = X @ w[1:] + w[0]
        nll = -(pos @ log_expit(z) + neg @ log_expit(-z)) / total
        p = expit(z)
        resid = (p * (pos + neg) - pos) / total
        grad = np.concatenate([[resid.sum()], X.T @ resid])
        grad[1:] += 2.0 * l2 * w[1:]
        return nll + l2 * (w[1:] @ w[1:]), grad

    w0 = np.zeros(n_feat + 1)
    base = pos.sum() / total
    w0[0] = np.log(base / (1.0 - base))
    res = minimize(objective, w0, jac=True, method="L-BFGS-B", options={"maxiter": 2000})
    return res.x


def _log_loss(X, pos, neg, w):
    z = X @ w[1:] + w[0]
    return float(-(pos @ log_expit(z) + neg @ log_expit(-z)) / (pos.sum() + neg.sum()))


@dataclass(frozen=True)
class LogisticPropensityFit:
    intercept: float
    weights: np.ndarray
    l2: float
    propensities: ItemPropensities


def fit_logreg_propensities(
    observed: np.ndarray,
    item_covariates: np.ndarray,
    user_ids=None,
    item_ids=None,
    l2_grid=(0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0),
    holdout: float = 0.2,
    seed: int = 0,
    rho_min: float = RHO_MIN,
) -> LogisticPropensityFit:
    """Logistic model of P(O[u, i] = 1) from item covariates, shared across users.

    ``observed`` is a |U| x |I| 0/1 matrix. The L2 weight is the grid value
    with the lowest log-loss on a held-out fraction of users; the final model
    is refit on all users.
    """
    O = np.asarray(observed, dtype=np.float64)
    X = np.asarray(item_covariates, dtype=np.float64)
    if O.ndim != 2 or X.ndim != 2 or X.shape[0] != O.shape[1]:
        raise ValueError("need a |U| x |I| observation matrix and |I| covariate rows")
    if O.sum() == 0 or O.sum() == O.size:
        raise DegenerateLabels("observations are all negative or all positive")
    n_users = O.shape[0]
    rng = np.random.default_rng(seed)
    held = rng.random(n_users) < holdout
    if held.all() or not held.any():
        held = np.zeros(n_users, dtype=bool)

    best_l2 = l2_grid[0]
    if held.any():
        fit_pos, fit_neg = O[~held].sum(0), (1 - O[~held]).sum(0)
        val_pos, val_neg = O[held].sum(0), (1 - O[held]).sum(0)
        if fit_pos.sum() > 0 and fit_neg.sum() > 0:
            losses = [
                _log_loss(X, val_pos, val_neg, _fit_logistic(X, fit_pos, fit_neg, l2))
                for l2 in l2_grid
            ]
            best_l2 = l2_grid[int(np.argmin(losses))]
    w = _fit_logistic(X, O.sum(0), (1 - O).sum(0), best_l2)
    rho_items = np.clip(expit(X @ w[1:] + w[0]), rho_min, 1.0)
    user_ids = tuple(user_ids) if user_ids is not None else tuple(f"u{i}" for i in range(n_users))
    item_ids = tuple(item_ids) if item_ids is not None else tuple(f"i{j}" for j in range(O.shape[1]))
    matrix = np.broadcast_to(rho_items, O.shape)
    return LogisticPropensityFit(
        float(w[0]), w[1:], best_l2, ItemPropensities(matrix, user_ids, item_ids)
    )

