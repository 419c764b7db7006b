"""Skip-gram with negative sampling over random-walk corpora."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import expit, log_expit

from ..errors import EmptyInput

log = logging.getLogger(__name__)

_TABLE_SIZE = 1_000_000


def _scatter_add(target: np.ndarray, rows: np.ndarray, values: np.ndarray) -> None:
    # sparse product is several times faster than np.add.at for row scatter
    m = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(target.shape[0], len(rows))
    )
    target += m @ values


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    node_ids: tuple
    vectors: np.ndarray
    loss_trace: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, node_id):
        return self.vectors[self.node_ids.index(node_id)]

    def subset(self, node_ids) -> np.ndarray:
        index = {n: k for k, n in enumerate(self.node_ids)}
        return self.vectors[[index[n] for n in node_ids]]


def context_pairs(walks: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """All (center, context) pairs with 1 <= |offset| <= window inside each walk."""
    centers, contexts = [], []
    length = walks.shape[1]
    for off in range(1, min(window, length - 1) + 1):
        a, b = walks[:, :-off].ravel(), walks[:, off:].ravel()
        centers += [a, b]
        contexts += [b, a]
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def train_embeddings(
    walks: np.ndarray,
    num_nodes: int,
    dim: int = 32,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    learning_rate: float = 0.025,
    seed: int = 0,
    batch_size: int = 2048,
    node_ids=None,
) -> EmbeddingTable:
    """Mini-batch SGD on the negative-sampling skip-gram objective.

    Input vectors start uniform in [-0.5/dim, 0.5/dim], output vectors at
    zero; the learning rate decays linearly over training. ``loss_trace``
    holds the mean per-pair loss of each epoch.
    """
    walks = np.asarray(walks, dtype=np.int64)
    if walks.size == 0:
        raise EmptyInput("no walks to train on")
    rng = np.random.default_rng(seed)
    w_in = (rng.random((num_nodes, dim)) - 0.5) / dim
    w_out = np.zeros((num_nodes, dim))
    node_ids = tuple(node_ids) if node_ids is not None else tuple(range(num_nodes))

    freq = np.bincount(walks.ravel(), minlength=num_nodes).astype(np.float64) ** 0.75
    # word2vec-style unigram^0.75 lookup table; sampling is then a single gather
    counts = np.floor(freq / freq.sum() * _TABLE_SIZE).astype(np.int64)
    counts[counts == 0] = 1
    unigram = np.repeat(np.arange(num_nodes), counts)
    centers, contexts = context_pairs(walks, window)
    n_pairs = len(centers)
    total_steps = max(epochs * ((n_pairs + batch_size - 1) // batch_size), 1)
    step = 0
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(n_pairs)
        loss_sum = 0.0
        for start in range(0, n_pairs, batch_size):
            idx = order[start : start + batch_size]
            c, o = centers[idx], contexts[idx]
            neg = unigram[rng.integers(0, len(unigram), size=(len(idx), negatives))]
            lr = learning_rate * max(1.0 - step / total_steps, 1e-4)
            step += 1

            targets = np.concatenate([o[:, None], neg], axis=1)  # (B, 1 + neg)
            labels = np.zeros(targets.shape)
            labels[:, 0] = 1.0
            vc = w_in[c]  # (B, D)
            vt = w_out[targets]  # (B, 1 + neg, D)
            scores = np.matmul(vt, vc[:, :, None])[:, :, 0]
            loss_sum += float(-(log_expit(scores[:, 0]).sum() + log_expit(-scores[:, 1:]).sum()))
            g = expit(scores) - labels  # d loss / d score
            grad_c = np.einsum("bk,bkd->bd", g, vt)
            grad_t = g[:, :, None] * vc[:, None, :]
            _scatter_add(w_out, targets.ravel(), -lr * grad_t.reshape(-1, dim))
            _scatter_add(w_in, c, -lr * grad_c)
        trace.append(loss_sum / max(n_pairs, 1))
        log.debug("skip-gram epoch %d loss %.5f", epoch + 1, trace[-1])
    return EmbeddingTable(node_ids, w_in, trace)
