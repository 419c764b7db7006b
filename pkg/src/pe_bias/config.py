"""Experiment configuration: YAML file with nested sections plus dotted overrides."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

METHODS = ("MF", "ExpoMF", "MF-IPS")
MODES = ("fully-synthetic", "semi-synthetic")

DEFAULTS: dict[str, Any] = {
    "mode": "fully-synthetic",
    "dataset": "yahoo",
    "paths": {
        "yahoo_train": None,
        "yahoo_test": None,
        "coat_train": None,
        "coat_test": None,
        "coat_features": None,
        "coat_propensities": None,
    },
    "sweep": None,
    "methods": list(METHODS),
    "num_seeds": 10,
    "master_seed": 0,
    "output_dir": "results",
    "workers": 1,
    "folds": 5,
    "synth": {
        "num_users": 1000,
        "num_topics": 50,
        "dim": 3,
        "sparsity": 0.1,
        "decay": 0.5,
        "test_rate": 0.05,
    },
    "grid": {
        "dims": [5, 10, 20],
        "regs": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
        "learning_rates": [1e-3, 3e-3, 1e-2],
    },
    "train": {"epochs": 30, "batch_size": 128, "loss": "squared"},
    "expomf": {"max_iters": 20, "lam_y": 1.0},
    "topics": {
        "graph_fraction": 0.2,
        "dim": 32,
        "walks_per_node": 10,
        "walk_length": 40,
        "window": 5,
        "negatives": 5,
        "epochs": 5,
        "learning_rate": 0.025,
        "gmm_max_iters": 200,
    },
}

DEFAULT_SWEEPS = {
    "fully-synthetic": [0.25, 0.5, 0.75, 1.0],
    "semi-synthetic": [25, 50, 75, 100],
}


LIST_KEYS = {"grid": ("dims", "regs", "learning_rates")}


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _scalar(text: str) -> Any:
    # YAML 1.1 leaves "1e-3" as a string
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return yaml.safe_load(text)


def parse_value(text: str) -> Any:
    """Scalar, or a list when the text holds commas outside brackets."""
    text = text.strip()
    if "," in text and not text.startswith("["):
        return [_scalar(part.strip()) for part in text.split(",") if part.strip()]
    return _scalar(text)


def apply_override(tree: dict, dotted_key: str, value: Any) -> None:
    keys = [k.replace("-", "_") for k in dotted_key.split(".")]
    node = tree
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            if k not in node:
                raise ConfigError(f"unknown config section {k!r} in {dotted_key!r}")
            raise ConfigError(f"{k!r} is not a section")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted_key!r}")
    node[keys[-1]] = value


def parse_overrides(args: list[str]) -> list[tuple[str, Any]]:
    out = []
    for arg in args:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(f"overrides must look like --key=value, got {arg!r}")
        key, _, value = arg[2:].partition("=")
        out.append((key, parse_value(value)))
    return out


@dataclass
class ExperimentConfig:
    mode: str
    dataset: str
    paths: dict
    sweep: list
    methods: list
    num_seeds: int
    master_seed: int
    output_dir: str
    workers: int
    folds: int
    synth: dict
    grid: dict
    train: dict
    expomf: dict
    topics: dict
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, tree: dict) -> "ExperimentConfig":
        merged = deep_merge(DEFAULTS, tree)
        unknown = set(tree) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if merged["sweep"] is None:
            merged["sweep"] = list(DEFAULT_SWEEPS.get(merged["mode"], []))
        # a single value given for a list-valued key means a one-element list
        for key in ("sweep", "methods"):
            merged[key] = _as_list(merged[key])
        for key in LIST_KEYS["grid"]:
            merged["grid"][key] = _as_list(merged["grid"][key])
        names = {f.name for f in fields(cls)} - {"raw"}
        config = cls(**{k: merged[k] for k in names}, raw=merged)
        config.check()
        return config

    @classmethod
    def load(cls, path=None, overrides=()) -> "ExperimentConfig":
        tree = {}
        if path is not None:
            tree = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
            if not isinstance(tree, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
        tree = deep_merge(DEFAULTS, tree)
        for key, value in overrides:
            apply_override(tree, key, value)
        return cls.from_dict(tree)

    def check(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not isinstance(self.sweep, list) or not self.sweep:
            raise ConfigError("sweep axis must be a non-empty list")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if int(self.num_seeds) < 2:
            raise ConfigError("num_seeds must be >= 2 for the paired t-test")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        if self.mode == "fully-synthetic":
            for a in self.sweep:
                if not 0.0 <= float(a) <= 1.0:
                    raise ConfigError(f"alpha {a} outside [0, 1]")
        elif self.dataset not in ("yahoo", "coat"):
            raise ConfigError("semi-synthetic dataset must be 'yahoo' or 'coat'")

    def setting_label(self, value) -> str:
        if self.mode == "fully-synthetic":
            return f"alpha={float(value):g}"
        if self.dataset == "coat":
            return f"coat={value}"
        return f"clusters={int(value)}"

    def as_dict(self) -> dict:
        return copy.deepcopy(self.raw)
