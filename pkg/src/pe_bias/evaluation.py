"""Unbiased-test metrics, NDCG@k, SNIPS cross-validation and paired t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import RATING_MAX, RATING_MIN, TopicInteractionTable
from .errors import ConfigError, EmptyInput, NoRankableUsers
from .estimators.losses import snips_loss


def rating_metrics(test: TopicInteractionTable, model) -> tuple[float, float]:
    """(MAE, MSE) over the test pairs with predictions clamped to [1, 5]."""
    if len(test) == 0:
        raise EmptyInput("test table is empty")
    pred = np.clip(model.predict_table(test), RATING_MIN, RATING_MAX)
    err = pred - test.ratings
    return float(np.mean(np.abs(err))), float(np.mean(err * err))


def ndcg_from_arrays(user_keys, topics, predictions, levels, k: int = 3) -> float:
    """Mean NDCG@k over users with at least two entries.

    Entries are ranked per user by prediction descending, ties by ascending
    topic id. Gain is 2**level - 1, discount log2(rank + 1).
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    user_keys = np.asarray(user_keys)
    topics = np.asarray(topics)
    predictions = np.asarray(predictions, dtype=np.float64)
    gains = np.exp2(np.asarray(levels, dtype=np.float64)) - 1.0
    _, ukey = np.unique(user_keys, return_inverse=True)
    ukey = ukey.ravel()

    pred_order = np.lexsort((topics, -predictions, ukey))
    ideal_order = np.lexsort((-gains, ukey))
    counts = np.bincount(ukey)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    # rank within user (0-based) for rows in sorted order
    ranks = np.arange(len(ukey)) - np.repeat(starts, counts)
    discount = np.where(ranks < k, 1.0 / np.log2(ranks + 2.0), 0.0)
    dcg = np.bincount(ukey[pred_order], weights=gains[pred_order] * discount, minlength=len(counts))
    idcg = np.bincount(ukey[ideal_order], weights=gains[ideal_order] * discount, minlength=len(counts))
    rankable = counts >= 2
    if not rankable.any():
        raise NoRankableUsers("no user has two or more test topics")
    return float(np.mean(dcg[rankable] / idcg[rankable]))


def ndcg_at_k(test: TopicInteractionTable, model, k: int = 3) -> float:
    if k < 1:
        raise ConfigError("k must be >= 1")
    if len(test) == 0:
        raise NoRankableUsers("test table is empty")
    return ndcg_from_arrays(test.users, test.topics, model.predict_table(test), test.levels, k)


def user_stratified_folds(table: TopicInteractionTable, folds: int, seed) -> np.ndarray:
    """Fold id per row; each user's rows are dealt round-robin across folds after shuffling."""
    if folds < 2:
        raise ConfigError("need at least two folds")
    if len(table) < folds:
        raise ConfigError(f"{len(table)} rows cannot fill {folds} folds")
    rng = np.random.default_rng([int(seed) & ((1 << 64) - 1), 7])
    _, ukey = np.unique(table.users, return_inverse=True)
    ukey = ukey.ravel()
    jitter = rng.permutation(len(table))
    order = np.lexsort((jitter, ukey))
    counts = np.bincount(ukey)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    within = np.arange(len(table)) - np.repeat(starts, counts)
    offsets = rng.integers(0, folds, size=len(counts))
    fold_of = np.empty(len(table), dtype=np.int64)
    fold_of[order] = (within + np.repeat(offsets, counts)) % folds
    return fold_of


@dataclass
class CVResult:
    best: object
    scores: list

    def __iter__(self):
        return iter((self.best, self.scores))


def cross_validate(
    train: TopicInteractionTable,
    grid: Sequence,
    props,
    fit: Callable,
    folds: int = 5,
    seed: int = 0,
) -> CVResult:
    """Pick the config with the lowest mean held-out SNIPS absolute error.

    ``fit(train_fold, config)`` must return a model exposing ``predict_table``.
    Ties go to the smaller ``dim``, then the smaller ``reg``.
    """
    if not grid:
        raise ConfigError("hyperparameter grid is empty")
    fold_of = user_stratified_folds(train, folds, seed)
    scored = []
    for config in grid:
        losses = []
        for f in range(folds):
            held = fold_of == f
            model = fit(train.subset(~held), config)
            losses.append(snips_loss(train.subset(held), model, props, kind="absolute"))
        scored.append((float(np.mean(losses)), config))
    best = min(scored, key=lambda s: (s[0], s[1].dim, s[1].reg))[1]
    return CVResult(best, scored)


# -- paired t-test ------------------------------------------------------------


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-15) -> float:
    """Continued fraction for the regularized incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.t, self.p))


def paired_ttest(scores_a: Sequence[float], scores_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on the differences a - b."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("score lists must be one-dimensional and of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    diff = a - b
    mean = float(np.mean(diff))
    sd = float(np.std(diff, ddof=1))
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1.0)
    if sd <= 1e-13 * scale:
        if abs(mean) <= 1e-13 * scale:
            return TTestResult(0.0, 1.0, degenerate=True)
        return TTestResult(math.copysign(math.inf, mean), 0.0, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, student_t_two_sided_p(t, n - 1))
