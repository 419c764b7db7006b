from .expomf import ExpoMfModel, exposure_posterior, log_posterior, train_expomf
from .losses import (
    ideal_estimate,
    ips_estimate,
    loss_ideal,
    loss_ips,
    loss_naive,
    naive_estimate,
    pointwise_loss,
    snips_estimate,
    snips_loss,
)
from .mf import TrainConfig, TrainResult, objective_and_gradient, train_mf

__all__ = [
    "ExpoMfModel",
    "TrainConfig",
    "TrainResult",
    "exposure_posterior",
    "ideal_estimate",
    "ips_estimate",
    "log_posterior",
    "loss_ideal",
    "loss_ips",
    "loss_naive",
    "naive_estimate",
    "objective_and_gradient",
    "pointwise_loss",
    "snips_estimate",
    "snips_loss",
    "train_expomf",
    "train_mf",
]
