"""Fully-synthetic user-topic preferences with positivity-biased (MNAR) observation.

Two stages: Gaussian latent factors produce dot-product scores that are
quantile-binned onto the 1..5 scale, then each cell is observed with a
probability mixing a positivity-bias kernel and a uniform rate, weighted by
``alpha``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import (
    NUM_LEVELS,
    RHO_MIN,
    FullPreferenceMatrix,
    PerCellPropensity,
    TopicInteractionTable,
)
from .errors import ConfigError


@dataclass(frozen=True)
class SynthConfig:
    num_users: int = 1000
    num_topics: int = 50
    dim: int = 3
    alpha: float = 1.0
    sparsity: float = 0.1
    decay: float = 0.5
    test_rate: float = 0.05
    seed: int = 0
    rho_min: float = RHO_MIN

    def __post_init__(self):
        for name in ("num_users", "num_topics", "dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 < self.sparsity <= 1.0:
            raise ConfigError("sparsity must lie in (0, 1]")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("decay must lie in (0, 1)")
        if not 0.0 < self.test_rate < 1.0:
            raise ConfigError("test_rate must lie in (0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


def _rng(seed, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & ((1 << 64) - 1), stream])


def quantile_levels(scores: np.ndarray, num_levels: int = NUM_LEVELS) -> np.ndarray:
    """Map scores to 1..num_levels by rank so every level holds an equal share of cells."""
    flat = scores.ravel()
    order = np.argsort(flat, kind="stable")
    ranks = np.empty(flat.size, dtype=np.int64)
    ranks[order] = np.arange(flat.size)
    levels = 1 + (ranks * num_levels) // flat.size
    return levels.reshape(scores.shape).astype(np.float64)


def generate_full_preferences(config: SynthConfig) -> FullPreferenceMatrix:
    rng = _rng(config.seed, 0)
    P = rng.standard_normal((config.num_users, config.dim))
    Q = rng.standard_normal((config.num_topics, config.dim))
    return FullPreferenceMatrix(quantile_levels(P @ Q.T))


def _test_mask(shape, rate: float, seed) -> np.ndarray:
    return _rng(seed, 1).random(shape) < rate


def sample_unbiased_test(Y: FullPreferenceMatrix, rate: float, seed) -> TopicInteractionTable:
    """MCAR sample: each cell kept independently with probability ``rate``."""
    if not 0.0 < rate <= 1.0:
        raise ConfigError("test rate must lie in (0, 1]")
    return Y.cells(_test_mask(Y.shape, rate, seed))


def observation_probabilities(
    Y: FullPreferenceMatrix, config: SynthConfig, candidates: np.ndarray | None = None
) -> np.ndarray:
    """Per-cell observation probability for the alpha-mixed positivity-bias mechanism.

    The scale of the positivity kernel is set once so the expected
    observation rate over ``candidates`` equals the target sparsity.
    """
    y = Y.values
    if candidates is None:
        candidates = np.ones(y.shape, dtype=bool)
    kernel = config.decay ** (NUM_LEVELS - y)
    mean_kernel = kernel[candidates].mean() if candidates.any() else kernel.mean()
    scale = config.sparsity / mean_kernel
    if config.alpha > 0 and scale > 1.0:
        raise ConfigError(
            f"sparsity {config.sparsity:g} infeasible for decay {config.decay:g}; "
            f"maximal feasible sparsity is {mean_kernel:.6g}"
        )
    rho = config.alpha * scale * kernel + (1.0 - config.alpha) * config.sparsity
    return np.clip(rho, config.rho_min, 1.0)


def sample_mnar_observations(
    Y: FullPreferenceMatrix,
    config: SynthConfig,
    exclude: TopicInteractionTable | None = None,
) -> tuple[TopicInteractionTable, PerCellPropensity]:
    """Draw the biased training log; cells in ``exclude`` are never observed.

    The returned propensity matrix holds exactly the probabilities used for
    the Bernoulli draws (after the rho_min floor).
    """
    candidates = np.ones(Y.shape, dtype=bool)
    if exclude is not None and len(exclude):
        rows = exclude.user_indices(Y.user_index)
        candidates[rows, exclude.topics] = False
    rho = observation_probabilities(Y, config, candidates)
    draws = _rng(config.seed, 2).random(Y.shape)
    observed = (draws < rho) & candidates
    return Y.cells(observed), PerCellPropensity(rho, Y.user_ids, rho_min=config.rho_min)


def generate_dataset(config: SynthConfig):
    """Full synthetic split: (Y, train, test, ground-truth propensities)."""
    Y = generate_full_preferences(config)
    test = sample_unbiased_test(Y, config.test_rate, config.seed)
    train, props = sample_mnar_observations(Y, config, exclude=test)
    return Y, train, test, props
