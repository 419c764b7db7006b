"""Matrix factorization trained by mini-batch Adam, optionally IPS-weighted (MF / MF-IPS)."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..core import FactorModel, TopicInteractionTable
from ..errors import ConfigError, DivergenceError, EmptyInput
from .losses import ips_estimate, pointwise_loss

log = logging.getLogger(__name__)

PARAM_NAMES = ("P", "Q", "bu", "bt")


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 10
    reg: float = 1e-3
    learning_rate: float = 1e-2
    batch_size: int = 128
    epochs: int = 30
    loss: str = "squared"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_std: float = 0.1

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.reg < 0:
            raise ConfigError("reg must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss not in ("squared", "absolute"):
            raise ConfigError(f"unknown loss {self.loss!r}")

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: FactorModel
    loss_trace: list = field(default_factory=list)


def objective_and_gradient(params, users, topics, ratings, weights, global_mean, reg, kind):
    """Weighted mini-batch objective and its gradient.

    objective = mean_b(w_b * L(yhat_b, y_b)) + reg * (|P|^2 + |Q|^2 + |bu|^2 + |bt|^2)
    """
    P, Q, bu, bt = params["P"], params["Q"], params["bu"], params["bt"]
    Pu, Qt = P[users], Q[topics]
    pred = np.einsum("ij,ij->i", Pu, Qt) + bu[users] + bt[topics] + global_mean
    err = pred - ratings
    n = len(ratings)
    if kind == "squared":
        data_loss = np.dot(weights, err * err) / n
        dpred = 2.0 * weights * err / n
    else:
        data_loss = np.dot(weights, np.abs(err)) / n
        dpred = weights * np.sign(err) / n
    penalty = reg * (np.vdot(P, P) + np.vdot(Q, Q) + np.dot(bu, bu) + np.dot(bt, bt))

    gP = 2.0 * reg * P
    gQ = 2.0 * reg * Q
    np.add.at(gP, users, dpred[:, None] * Qt)
    np.add.at(gQ, topics, dpred[:, None] * Pu)
    gbu = 2.0 * reg * bu + np.bincount(users, weights=dpred, minlength=len(bu))
    gbt = 2.0 * reg * bt + np.bincount(topics, weights=dpred, minlength=len(bt))
    return float(data_loss + penalty), {"P": gP, "Q": gQ, "bu": gbu, "bt": gbt}


def _record_loss(model, train, weights, num_cells, kind, weighted):
    losses = pointwise_loss(model.predict_table(train), train.ratings, kind)
    if weighted:
        return ips_estimate(losses, 1.0 / weights, num_cells)
    return float(np.mean(losses))


def train_mf(
    train: TopicInteractionTable,
    config: TrainConfig,
    props=None,
    num_topics: int | None = None,
    num_cells: int | None = None,
) -> TrainResult:
    """Fit MF (``props is None``) or MF-IPS (per-example weights 1/rho).

    ``loss_trace`` records, after every epoch, the naive loss (MF) or the IPS
    loss over ``num_cells`` cells (MF-IPS) on the training set.
    """
    if len(train) == 0:
        raise EmptyInput("training table is empty")
    user_ids = train.user_list()
    uindex = {u: i for i, u in enumerate(user_ids)}
    users = train.user_indices(uindex)
    topics = train.topics
    ratings = train.ratings
    n_topics = int(num_topics if num_topics is not None else topics.max() + 1)
    n_cells = num_cells if num_cells is not None else len(user_ids) * n_topics
    weighted = props is not None
    weights = np.ones(len(train)) if props is None else 1.0 / props.lookup(train)
    global_mean = float(np.sum(weights * ratings) / np.sum(weights))

    init_rng = np.random.default_rng([config.seed, 0])
    shuffle_rng = np.random.default_rng([config.seed, 1])
    params = {
        "P": config.init_std * init_rng.standard_normal((len(user_ids), config.dim)),
        "Q": config.init_std * init_rng.standard_normal((n_topics, config.dim)),
        "bu": np.zeros(len(user_ids)),
        "bt": np.zeros(n_topics),
    }
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps

    def snapshot():
        return FactorModel(
            params["P"], params["Q"], params["bu"], params["bt"], global_mean, tuple(user_ids)
        )

    trace = []
    step = 0
    n = len(train)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            obj, grads = objective_and_gradient(
                params, users[idx], topics[idx], ratings[idx], weights[idx],
                global_mean, config.reg, config.loss,
            )
            if not np.isfinite(obj):
                raise DivergenceError(epoch, lr)
            step += 1
            corr1 = 1.0 - b1**step
            corr2 = 1.0 - b2**step
            for k in PARAM_NAMES:
                g = grads[k]
                m[k] = b1 * m[k] + (1.0 - b1) * g
                v[k] = b2 * v[k] + (1.0 - b2) * (g * g)
                params[k] = params[k] - lr * (m[k] / corr1) / (np.sqrt(v[k] / corr2) + eps)
        if not all(np.all(np.isfinite(p)) for p in params.values()):
            raise DivergenceError(epoch, lr)
        value = _record_loss(snapshot(), train, weights, n_cells, config.loss, weighted)
        if not np.isfinite(value):
            raise DivergenceError(epoch, lr)
        trace.append(value)
        log.debug("epoch %d loss %.6f", epoch, value)
    return TrainResult(snapshot(), trace)
