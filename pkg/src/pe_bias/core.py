"""Shared data types: rating tables, topic assignments, propensities, factor models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import EmptyInput, MissingPropensity, ValidationError

RHO_MIN = 0.01
RATING_MIN = 1.0
RATING_MAX = 5.0
NUM_LEVELS = 5


def rating_level(ratings) -> np.ndarray:
    """Nearest integer level in 1..5, rounding halves away from zero."""
    r = np.asarray(ratings, dtype=np.float64)
    levels = np.sign(r) * np.floor(np.abs(r) + 0.5)
    return np.clip(levels, 1, NUM_LEVELS).astype(np.int64)


def _first_appearance(values) -> dict:
    return {v: i for i, v in enumerate(dict.fromkeys(values.tolist()))}


@dataclass(frozen=True, eq=False)
class RatingTable:
    """Immutable list of (user, entity, rating) triples.

    Equality is order-insensitive: two tables are equal when they hold the
    same set of triples.
    """

    users: np.ndarray
    entities: np.ndarray
    ratings: np.ndarray

    entity_name = "entity"

    def __post_init__(self):
        users = np.asarray(self.users, dtype=object)
        ratings = np.asarray(self.ratings, dtype=np.float64)
        entities = self._coerce_entities(self.entities)
        if not (len(users) == len(entities) == len(ratings)):
            raise ValueError("column lengths differ")
        for arr in (users, entities, ratings):
            arr.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "entities", entities)
        object.__setattr__(self, "ratings", ratings)

    @staticmethod
    def _coerce_entities(entities):
        return np.asarray(entities, dtype=object)

    @classmethod
    def from_triples(cls, triples: Iterable[tuple]):
        triples = list(triples)
        if not triples:
            return cls.empty()
        users, entities, ratings = zip(*triples)
        return cls([str(u) for u in users], list(entities), list(ratings))

    @classmethod
    def empty(cls):
        return cls(np.empty(0, dtype=object), np.empty(0, dtype=object), np.empty(0))

    def __len__(self) -> int:
        return len(self.ratings)

    def __iter__(self):
        return iter(zip(self.users.tolist(), self.entities.tolist(), self.ratings.tolist()))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={len(self)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, RatingTable):
            return NotImplemented
        if type(self) is not type(other) or len(self) != len(other):
            return False
        return sorted(self) == sorted(other)

    def subset(self, mask_or_index):
        return type(self)(
            self.users[mask_or_index], self.entities[mask_or_index], self.ratings[mask_or_index]
        )

    def concat(self, other):
        return type(self)(
            np.concatenate([self.users, other.users]),
            np.concatenate([self.entities, other.entities]),
            np.concatenate([self.ratings, other.ratings]),
        )

    def user_list(self) -> list:
        return list(dict.fromkeys(self.users.tolist()))

    def sort_order(self) -> np.ndarray:
        """Row permutation sorting by (user index, entity index)."""
        umap = _first_appearance(self.users)
        emap = self._entity_sort_keys()
        uidx = np.fromiter((umap[u] for u in self.users.tolist()), np.int64, len(self))
        eidx = np.fromiter((emap[e] for e in self.entities.tolist()), np.int64, len(self))
        return np.lexsort((eidx, uidx))

    def _entity_sort_keys(self) -> dict:
        return _first_appearance(self.entities)

    def sorted(self):
        return self.subset(self.sort_order())


class InteractionTable(RatingTable):
    """Item-level ratings: (user_id, item_id, rating in [1, 5])."""

    entity_name = "item"

    @property
    def items(self) -> np.ndarray:
        return self.entities

    @classmethod
    def from_triples(cls, triples):
        triples = list(triples)
        if not triples:
            return cls.empty()
        users, items, ratings = zip(*triples)
        return cls([str(u) for u in users], [str(i) for i in items], list(ratings))


class TopicInteractionTable(RatingTable):
    """Observed topic-level ratings; the presence of a row means O[u, t] = 1."""

    entity_name = "topic"

    @staticmethod
    def _coerce_entities(entities):
        return np.asarray(entities, dtype=np.int64)

    @classmethod
    def empty(cls):
        return cls(np.empty(0, dtype=object), np.empty(0, dtype=np.int64), np.empty(0))

    @property
    def topics(self) -> np.ndarray:
        return self.entities

    @property
    def levels(self) -> np.ndarray:
        return rating_level(self.ratings)

    def _entity_sort_keys(self) -> dict:
        return {t: t for t in set(self.entities.tolist())}

    def user_indices(self, user_index: Mapping[str, int]) -> np.ndarray:
        return np.fromiter((user_index[u] for u in self.users.tolist()), np.int64, len(self))


def build_index_maps(table: RatingTable) -> tuple[dict, dict]:
    """Dense 0-based index maps for users and entities in first-appearance order."""
    if len(table) == 0:
        raise EmptyInput("cannot index an empty table")
    return _first_appearance(table.users), _first_appearance(table.entities)


def validate(table: RatingTable) -> list[str]:
    """Return every invariant violation found; an empty list means the table is valid.

    Row numbers are 1-based data rows (the header is not counted).
    """
    violations = []
    seen = {}
    for row, (user, entity, rating) in enumerate(table, start=1):
        if not (RATING_MIN <= rating <= RATING_MAX) or not np.isfinite(rating):
            violations.append(f"rating out of range, row {row}")
        key = (user, entity)
        if key in seen:
            violations.append(
                f"duplicate pair ({user}, {entity}), row {row} (first at row {seen[key]})"
            )
        else:
            seen[key] = row
    return violations


def check_valid(table: RatingTable) -> None:
    problems = validate(table)
    if problems:
        shown = "; ".join(problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise ValidationError(shown + more)


@dataclass(frozen=True)
class TopicAssignment:
    """Item id -> non-empty frozenset of dense topic ids."""

    topics_of: Mapping[str, frozenset]

    def __post_init__(self):
        frozen = {str(i): frozenset(int(t) for t in ts) for i, ts in self.topics_of.items()}
        object.__setattr__(self, "topics_of", frozen)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple]) -> "TopicAssignment":
        mapping: dict[str, set] = {}
        for item, topic in pairs:
            mapping.setdefault(str(item), set()).add(int(topic))
        return cls(mapping)

    @property
    def num_topics(self) -> int:
        ids = [t for ts in self.topics_of.values() for t in ts]
        return max(ids) + 1 if ids else 0

    def __len__(self) -> int:
        return len(self.topics_of)

    def __contains__(self, item) -> bool:
        return item in self.topics_of

    def __getitem__(self, item) -> frozenset:
        return self.topics_of[item]

    def pairs(self) -> list[tuple[str, int]]:
        return [(i, t) for i, ts in self.topics_of.items() for t in sorted(ts)]

    def items_of(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for item, t in self.pairs():
            out.setdefault(t, []).append(item)
        return out

    def validate(self) -> list[str]:
        problems = [f"item {i!r} has no topic" for i, ts in self.topics_of.items() if not ts]
        used = {t for ts in self.topics_of.values() for t in ts}
        if any(t < 0 for t in used):
            problems.append("negative topic id")
        missing = sorted(set(range(self.num_topics)) - used)
        if missing:
            problems.append(f"topic ids without items: {missing[:10]}")
        return problems


@dataclass(frozen=True, eq=False)
class FullPreferenceMatrix:
    """Dense ground-truth user x topic ratings (synthetic settings only)."""

    values: np.ndarray
    user_ids: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("preference matrix must be 2-D")
        if np.any(values < RATING_MIN) or np.any(values > RATING_MAX):
            raise ValidationError("preference entries must lie in [1, 5]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not self.user_ids:
            object.__setattr__(self, "user_ids", tuple(f"u{i}" for i in range(values.shape[0])))
        elif len(self.user_ids) != values.shape[0]:
            raise ValueError("user_ids length does not match matrix rows")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def user_index(self) -> dict:
        return {u: i for i, u in enumerate(self.user_ids)}

    def cells(self, mask: np.ndarray) -> TopicInteractionTable:
        rows, cols = np.nonzero(mask)
        users = np.asarray(self.user_ids, dtype=object)[rows]
        return TopicInteractionTable(users, cols, self.values[rows, cols])


def _clip_rho(values, rho_min: float):
    if rho_min <= 0:
        raise ValueError("rho_min must be positive")
    return np.clip(np.asarray(values, dtype=np.float64), rho_min, 1.0)


@dataclass(frozen=True)
class ConstantPropensity:
    rho: float
    rho_min: float = RHO_MIN

    def __post_init__(self):
        object.__setattr__(self, "rho", float(_clip_rho(self.rho, self.rho_min)))

    def lookup(self, table: TopicInteractionTable) -> np.ndarray:
        return np.full(len(table), self.rho)


@dataclass(frozen=True)
class PerLevelPropensity:
    """Observation probability per discrete rating level 1..5."""

    rho_by_level: Mapping[int, float]
    rho_min: float = RHO_MIN

    def __post_init__(self):
        clipped = {int(k): float(_clip_rho(v, self.rho_min)) for k, v in self.rho_by_level.items()}
        object.__setattr__(self, "rho_by_level", clipped)

    def lookup(self, table: TopicInteractionTable) -> np.ndarray:
        table_ = np.zeros(NUM_LEVELS + 1)
        for level in range(1, NUM_LEVELS + 1):
            if level not in self.rho_by_level:
                raise MissingPropensity(f"no propensity for rating level {level}")
            table_[level] = self.rho_by_level[level]
        return table_[table.levels]


@dataclass(frozen=True, eq=False)
class PerCellPropensity:
    """Dense |U| x |T| propensity matrix with its user-id row map."""

    matrix: np.ndarray
    user_ids: tuple
    rho_min: float = RHO_MIN

    def __post_init__(self):
        m = _clip_rho(self.matrix, self.rho_min)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        if m.ndim != 2 or m.shape[0] != len(self.user_ids):
            raise ValueError("matrix rows must match user_ids")
        object.__setattr__(self, "_index", {u: i for i, u in enumerate(self.user_ids)})

    def lookup(self, table: TopicInteractionTable) -> np.ndarray:
        try:
            rows = table.user_indices(self._index)
        except KeyError as exc:
            raise MissingPropensity(f"no propensity row for user {exc.args[0]!r}") from None
        topics = table.topics
        if len(topics) and (topics.min() < 0 or topics.max() >= self.matrix.shape[1]):
            raise MissingPropensity("topic id outside the propensity matrix")
        return self.matrix[rows, topics]


PropensityModel = ConstantPropensity | PerLevelPropensity | PerCellPropensity


@dataclass(frozen=True, eq=False)
class FactorModel:
    """Biased matrix factorization: P[u] . Q[t] + b_u + b_t + mu."""

    user_factors: np.ndarray
    topic_factors: np.ndarray
    user_bias: np.ndarray
    topic_bias: np.ndarray
    global_mean: float
    user_ids: tuple = field(default=())

    def __post_init__(self):
        P = np.asarray(self.user_factors, dtype=np.float64)
        Q = np.asarray(self.topic_factors, dtype=np.float64)
        if P.ndim != 2 or Q.ndim != 2 or P.shape[1] != Q.shape[1] or P.shape[1] < 1:
            raise ValueError("factor matrices must be 2-D with a shared dimension >= 1")
        for name, arr in (("P", P), ("Q", Q), ("b_u", self.user_bias), ("b_t", self.topic_bias)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        object.__setattr__(self, "user_factors", P)
        object.__setattr__(self, "topic_factors", Q)
        object.__setattr__(self, "user_bias", np.asarray(self.user_bias, dtype=np.float64))
        object.__setattr__(self, "topic_bias", np.asarray(self.topic_bias, dtype=np.float64))
        object.__setattr__(self, "global_mean", float(self.global_mean))
        if not self.user_ids:
            object.__setattr__(self, "user_ids", tuple(f"u{i}" for i in range(P.shape[0])))
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "_index", {u: i for i, u in enumerate(self.user_ids)})

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def num_topics(self) -> int:
        return self.topic_factors.shape[0]

    def predict(self, users, topics, clamp: bool = False) -> np.ndarray:
        """Predicted ratings; users or topics unseen in training fall back to the biases we have."""
        topics = np.asarray(topics, dtype=np.int64)
        rows = np.fromiter((self._index.get(u, -1) for u in users), np.int64, len(topics))
        known_u = rows >= 0
        known_t = (topics >= 0) & (topics < self.num_topics)
        r, t = np.where(known_u, rows, 0), np.where(known_t, topics, 0)
        dot = np.einsum("ij,ij->i", self.user_factors[r], self.topic_factors[t])
        pred = (
            np.where(known_u & known_t, dot, 0.0)
            + np.where(known_u, self.user_bias[r], 0.0)
            + np.where(known_t, self.topic_bias[t], 0.0)
            + self.global_mean
        )
        return np.clip(pred, RATING_MIN, RATING_MAX) if clamp else pred

    def predict_table(self, table: TopicInteractionTable, clamp: bool = False) -> np.ndarray:
        return self.predict(table.users.tolist(), table.topics, clamp=clamp)

    def predict_matrix(self, clamp: bool = False) -> np.ndarray:
        full = (
            self.user_factors @ self.topic_factors.T
            + self.user_bias[:, None]
            + self.topic_bias[None, :]
            + self.global_mean
        )
        return np.clip(full, RATING_MIN, RATING_MAX) if clamp else full
