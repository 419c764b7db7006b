import numpy as np
import pytest

from pe_bias.core import FactorModel, TopicInteractionTable


def constant_model(value: float, num_users: int, num_topics: int, user_ids=None) -> FactorModel:
    """A factor model predicting ``value`` everywhere."""
    return FactorModel(
        np.zeros((num_users, 1)),
        np.zeros((num_topics, 1)),
        np.zeros(num_users),
        np.zeros(num_topics),
        value,
        tuple(user_ids) if user_ids else (),
    )


def matrix_model(pred: np.ndarray) -> FactorModel:
    """Exact rank-k model reproducing an arbitrary prediction matrix (via SVD)."""
    pred = np.asarray(pred, dtype=np.float64)
    U, s, Vt = np.linalg.svd(pred, full_matrices=False)
    P = U * s
    return FactorModel(P, Vt.T, np.zeros(pred.shape[0]), np.zeros(pred.shape[1]), 0.0)


def topic_table(triples) -> TopicInteractionTable:
    return TopicInteractionTable.from_triples(triples)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
