"""Deterministic per-stage seed derivation.

Seeds are derived with splitmix64 so that any (master seed, setting, seed
index, stage) tuple maps to an independent 64-bit stream seed. The mixing is
plain integer arithmetic and can be reproduced in any language; the fixed
vectors in ``tests/data/seed_vectors.tsv`` pin it down.
"""

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def fnv1a64(label: str) -> int:
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def resolve_seeds(master_seed: int, setting_index: int, seed_index: int, stage: str) -> int:
    h = splitmix64(master_seed & _MASK)
    for value in (setting_index, seed_index, fnv1a64(stage)):
        h = splitmix64(h ^ (value & _MASK))
    return h


def stage_rng(master_seed, setting_index, seed_index, stage) -> np.random.Generator:
    return np.random.default_rng(resolve_seeds(master_seed, setting_index, seed_index, stage))
