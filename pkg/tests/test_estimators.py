import itertools

import numpy as np
import pytest

from pe_bias.core import ConstantPropensity, FullPreferenceMatrix, PerCellPropensity, TopicInteractionTable
from pe_bias.errors import DivergenceError, EmptyInput, MissingPropensity
from pe_bias.estimators import (
    TrainConfig,
    exposure_posterior,
    ideal_estimate,
    ips_estimate,
    loss_ideal,
    loss_ips,
    loss_naive,
    naive_estimate,
    objective_and_gradient,
    pointwise_loss,
    snips_estimate,
    snips_loss,
    train_expomf,
    train_mf,
)
from pe_bias.synth import SynthConfig, generate_dataset
from tests.conftest import constant_model, matrix_model, topic_table


def enumerate_expectation(estimator, rho):
    """Exact expectation over every observation mask, skipping masks where the estimator is undefined."""
    flat = rho.ravel()
    total, mass = 0.0, 0.0
    for bits in itertools.product((False, True), repeat=flat.size):
        mask = np.array(bits)
        p = float(np.prod(np.where(mask, flat, 1.0 - flat)))
        if p == 0.0:
            continue
        try:
            value = estimator(mask.reshape(rho.shape))
        except EmptyInput:
            continue
        total += p * value
        mass += p
    return total, mass


def test_ideal_hand_values():
    Y = FullPreferenceMatrix(np.array([[1.0, 2.0], [3.0, 5.0]]))
    assert loss_ideal(Y, constant_model(3.0, 2, 2)) == pytest.approx(2.25)
    assert loss_ideal(Y, matrix_model(Y.values)) == pytest.approx(0.0, abs=1e-20)
    assert loss_ideal(Y, matrix_model(Y.values + 1.0)) == pytest.approx(1.0)


def test_naive_hand_values():
    obs = topic_table([("u0", 0, 1.0), ("u1", 1, 5.0)])
    model = constant_model(3.0, 2, 2)
    assert loss_naive(obs, model, "squared") == 4.0
    assert loss_naive(obs, model, "absolute") == 2.0
    assert loss_naive(topic_table([("u0", 0, 3.0)]), model) == 0.0
    with pytest.raises(EmptyInput):
        loss_naive(TopicInteractionTable.empty(), model)


def test_ips_hand_values():
    obs = topic_table([("u0", 0, 1.0), ("u1", 1, 5.0)])
    assert loss_ips(obs, constant_model(3.0, 2, 2), ConstantPropensity(0.5), 4) == 4.0
    Y = FullPreferenceMatrix(np.array([[1.0, 2.0], [3.0, 5.0]]))
    full = Y.cells(np.ones((2, 2), dtype=bool))
    model = constant_model(2.5, 2, 2)
    assert loss_ips(full, model, ConstantPropensity(1.0), 4) == pytest.approx(loss_ideal(Y, model))
    with pytest.raises(MissingPropensity):
        loss_ips(topic_table([("zz", 0, 1.0)]), model, PerCellPropensity(np.ones((1, 2)), ("u0",)), 4)


def test_ips_unbiased_on_one_by_two():
    y, pred, rho = np.array([1.0, 5.0]), np.array([3.0, 3.0]), np.array([0.5, 1.0])
    losses = pointwise_loss(pred, y)
    expected, _ = enumerate_expectation(lambda m: ips_estimate(losses[m], rho[m], 2), rho)
    assert expected == pytest.approx(4.0, abs=1e-12)
    assert ideal_estimate(losses) == 4.0


@pytest.mark.parametrize("seed", range(10))
def test_ips_unbiased_random_instances(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 4, 2))
    y = rng.uniform(1, 5, shape)
    pred = rng.uniform(1, 5, shape)
    rho = rng.uniform(0.05, 1.0, shape)
    for kind in ("squared", "absolute"):
        losses = pointwise_loss(pred, y, kind)
        expected, _ = enumerate_expectation(lambda m: ips_estimate(losses[m], rho[m], y.size), rho)
        assert abs(expected - ideal_estimate(losses)) < 1e-10


def test_naive_biased_when_rho_tracks_rating():
    y = np.array([[1.0, 5.0]])
    rho = np.array([[0.1, 0.9]])
    losses = pointwise_loss(np.full_like(y, 3.5), y)
    expected, mass = enumerate_expectation(lambda m: naive_estimate(losses, m), rho)
    assert abs(expected / mass - ideal_estimate(losses)) > 1e-3


def test_snips_hand_and_invariances():
    assert snips_estimate([1.0, 3.0], [0.5, 1.0]) == pytest.approx(5 / 3)
    assert snips_estimate([2.0, 2.0, 2.0], [0.1, 0.5, 0.9]) == pytest.approx(2.0, abs=1e-15)
    losses = np.array([0.3, 1.7, 4.0])
    assert snips_estimate(losses, np.full(3, 0.37)) == pytest.approx(losses.mean(), abs=1e-15)
    obs = topic_table([("u0", 0, 1.0)])
    with pytest.raises(EmptyInput):
        snips_loss(TopicInteractionTable.empty(), constant_model(3.0, 1, 1), ConstantPropensity(0.5))
    assert snips_loss(obs, constant_model(3.0, 1, 1), ConstantPropensity(0.5)) == 2.0


def fd_gradient_check(kind, seed):
    rng = np.random.default_rng(seed)
    n_users, n_topics, d, n = 6, 5, 3, 25
    params = {
        "P": rng.normal(size=(n_users, d)), "Q": rng.normal(size=(n_topics, d)),
        "bu": rng.normal(size=n_users), "bt": rng.normal(size=n_topics),
    }
    users = rng.integers(0, n_users, n)
    topics = rng.integers(0, n_topics, n)
    ratings = rng.uniform(1, 5, n)
    weights = 1.0 / rng.uniform(0.05, 1.0, n)
    args = (users, topics, ratings, weights, 3.0, 0.01, kind)
    _, grad = objective_and_gradient(params, *args)
    coords = [(k, tuple(rng.integers(0, s) for s in params[k].shape)) for k in rng.choice(list(params), 20)]
    worst = 0.0
    h = 1e-6
    for name, idx in coords:
        plus = {k: v.copy() for k, v in params.items()}
        minus = {k: v.copy() for k, v in params.items()}
        plus[name][idx] += h
        minus[name][idx] -= h
        numeric = (objective_and_gradient(plus, *args)[0] - objective_and_gradient(minus, *args)[0]) / (2 * h)
        analytic = grad[name][idx]
        worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
    return worst


def test_weighted_squared_gradient_matches_finite_differences():
    assert fd_gradient_check("squared", seed=0) < 1e-4


def test_weighted_absolute_gradient_matches_finite_differences():
    # random real-valued data keeps every residual far from the kink
    assert fd_gradient_check("absolute", seed=1) < 1e-4


@pytest.fixture(scope="module")
def small_synth():
    _, train, test, props = generate_dataset(SynthConfig(num_users=200, num_topics=20, alpha=1.0, seed=2))
    return train, test, props


def test_unit_propensities_match_unweighted_training(small_synth):
    train, _, _ = small_synth
    cfg = TrainConfig(dim=4, epochs=3, seed=5)
    a = train_mf(train, cfg, None, num_topics=20).model
    b = train_mf(train, cfg, ConstantPropensity(1.0), num_topics=20).model
    for x, y in [(a.user_factors, b.user_factors), (a.topic_factors, b.topic_factors),
                 (a.user_bias, b.user_bias), (a.topic_bias, b.topic_bias)]:
        assert np.array_equal(x, y)
    assert a.global_mean == b.global_mean


@pytest.mark.parametrize("weighted", [False, True])
def test_training_loss_decreases(small_synth, weighted):
    train, _, props = small_synth
    result = train_mf(train, TrainConfig(dim=4, epochs=5, seed=1), props if weighted else None, num_topics=20)
    assert all(b < a for a, b in zip(result.loss_trace, result.loss_trace[1:]))


def test_training_deterministic(small_synth):
    train, _, props = small_synth
    cfg = TrainConfig(dim=3, epochs=2, seed=8)
    a, b = train_mf(train, cfg, props, num_topics=20), train_mf(train, cfg, props, num_topics=20)
    assert np.array_equal(a.model.user_factors, b.model.user_factors)
    assert a.loss_trace == b.loss_trace


def test_divergence_reports_epoch_and_rate(small_synth):
    train, _, _ = small_synth
    with pytest.raises(DivergenceError) as err:
        train_mf(train, TrainConfig(dim=2, epochs=3, learning_rate=1e200), num_topics=20)
    assert err.value.epoch == 1 and err.value.learning_rate == 1e200


def test_exposure_posterior_edge_cases():
    scores = np.array([[0.3, 2.0]])
    observed = np.array([[True, False]])
    gamma = exposure_posterior(scores, observed, np.array([0.4, 0.0]), 1.0)
    assert gamma.tolist() == [[1.0, 0.0]]
    gamma = exposure_posterior(scores, np.zeros((1, 2), bool), np.array([0.5, 0.5]), 1.0)
    # closed form for mu = 0.5: N(0|s) / (N(0|s) + 1)
    dens = np.exp(-0.5 * scores**2) / np.sqrt(2 * np.pi)
    np.testing.assert_allclose(gamma, dens / (dens + 1.0), rtol=1e-12)


def test_expomf_monotone_and_bounded(small_synth):
    train, test, _ = small_synth
    model = train_expomf(train, TrainConfig(dim=3, reg=0.1, seed=0), num_topics=20, max_iters=15, tol=0)
    assert np.all(np.diff(model.objective_trace) >= -1e-6)
    assert np.all((model.exposure_prior >= 0) & (model.exposure_prior <= 1))
    assert np.all((model.exposure_posterior >= 0) & (model.exposure_posterior <= 1))
    pred = model.predict_table(test)
    assert pred.min() >= 1 and pred.max() <= 5
    rows = train.user_indices({u: i for i, u in enumerate(model.user_ids)})
    assert np.all(model.exposure_posterior[rows, train.topics] == 1.0)
