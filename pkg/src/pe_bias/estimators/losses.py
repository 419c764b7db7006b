"""Ideal, naive, IPS and SNIPS rating-loss estimators."""

from __future__ import annotations

import numpy as np

from ..core import FullPreferenceMatrix, TopicInteractionTable
from ..errors import EmptyInput, MissingPropensity

LOSS_KINDS = ("squared", "absolute")


def pointwise_loss(pred, y, kind: str = "squared") -> np.ndarray:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    if kind == "squared":
        return err * err
    if kind == "absolute":
        return np.abs(err)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def ideal_estimate(losses) -> float:
    return float(np.mean(losses))


def naive_estimate(losses, observed_mask) -> float:
    observed_mask = np.asarray(observed_mask, dtype=bool)
    if not observed_mask.any():
        raise EmptyInput("no observed entries")
    return float(np.mean(np.asarray(losses)[observed_mask]))


def ips_estimate(losses, rho, num_cells: int) -> float:
    """Sum of observed losses divided by propensity, normalized by the full cell count."""
    return float(np.sum(np.asarray(losses) / np.asarray(rho)) / num_cells)


def snips_estimate(losses, rho) -> float:
    w = 1.0 / np.asarray(rho, dtype=np.float64)
    return float(np.sum(w * np.asarray(losses)) / np.sum(w))


def loss_ideal(Y: FullPreferenceMatrix, model, kind: str = "squared") -> float:
    pred = model.predict_matrix()
    return ideal_estimate(pointwise_loss(pred, Y.values, kind))


def loss_naive(observed: TopicInteractionTable, model, kind: str = "squared") -> float:
    if len(observed) == 0:
        raise EmptyInput("observed table is empty")
    return float(np.mean(pointwise_loss(model.predict_table(observed), observed.ratings, kind)))


def _propensities(table, props) -> np.ndarray:
    rho = props.lookup(table)
    if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        raise MissingPropensity("propensities must be positive and finite")
    return rho


def loss_ips(
    observed: TopicInteractionTable, model, props, num_cells: int, kind: str = "squared"
) -> float:
    if num_cells <= 0:
        raise ValueError("num_cells must be positive")
    losses = pointwise_loss(model.predict_table(observed), observed.ratings, kind)
    return ips_estimate(losses, _propensities(observed, props), num_cells)


def snips_loss(validation: TopicInteractionTable, model, props, kind: str = "absolute") -> float:
    if len(validation) == 0:
        raise EmptyInput("validation table is empty")
    losses = pointwise_loss(model.predict_table(validation), validation.ratings, kind)
    return snips_estimate(losses, _propensities(validation, props))
