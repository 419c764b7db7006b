"""TSV interchange formats, model files, and loaders for Yahoo! R3 and Coat."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .core import (
    ConstantPropensity,
    FactorModel,
    InteractionTable,
    PerCellPropensity,
    PerLevelPropensity,
    RatingTable,
    TopicAssignment,
    TopicInteractionTable,
    check_valid,
)
from .errors import ParseError, SchemaError, ValidationError
from .estimators.expomf import ExpoMfModel
from .pe_sim import ItemPropensities, fit_logreg_propensities

log = logging.getLogger(__name__)

ITEM_HEADER = ("user", "item", "rating")
TOPIC_HEADER = ("user", "topic", "rating")
CELL_RHO_HEADER = ("user", "topic", "rho")
LEVEL_RHO_HEADER = ("level", "rho")
CONSTANT_RHO_HEADER = ("rho",)
ASSIGNMENT_HEADER = ("item", "topic")

COAT_SHAPE = (290, 300)


def fmt_real(x: float) -> str:
    """Shortest of 6/9/12/17 significant digits that reparses to exactly ``x``."""
    x = float(x)
    for spec in ("#.6g", "#.9g", "#.12g"):
        s = format(x, spec)
        if float(s) == x:
            return s
    return format(x, ".17g")


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line.strip():
                yield lineno, line


def _header(path) -> tuple:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n").rstrip("\r")
    return tuple(first.split("\t"))


def _parse_float(text, lineno):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", lineno) from None


def read_tsv(path) -> RatingTable:
    """Read a rating table; the header selects item-level or topic-level."""
    header = _header(path)
    if header == ITEM_HEADER:
        cls = InteractionTable
    elif header == TOPIC_HEADER:
        cls = TopicInteractionTable
    else:
        raise SchemaError(f"{path}: unknown header {header!r}")
    users, entities, ratings = [], [], []
    lines = _read_lines(path)
    next(lines, None)
    for lineno, line in lines:
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
        users.append(parts[0])
        if cls is TopicInteractionTable:
            try:
                entities.append(int(parts[1]))
            except ValueError:
                raise ParseError(f"topic id must be an integer: {parts[1]!r}", lineno) from None
        else:
            entities.append(parts[1])
        ratings.append(_parse_float(parts[2], lineno))
    if not ratings:
        return cls.empty()
    return cls(users, entities, ratings)


def write_tsv(path, table: RatingTable) -> None:
    header = ITEM_HEADER if isinstance(table, InteractionTable) else TOPIC_HEADER
    table = table.sorted() if len(table) else table
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for user, entity, rating in table:
            fh.write(f"{user}\t{entity}\t{fmt_real(rating)}\n")


# -- propensities ---------------------------------------------------------------


def write_propensities(path, props) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if isinstance(props, PerCellPropensity):
            fh.write("\t".join(CELL_RHO_HEADER) + "\n")
            for u, row in zip(props.user_ids, props.matrix):
                for t, rho in enumerate(row):
                    fh.write(f"{u}\t{t}\t{fmt_real(rho)}\n")
        elif isinstance(props, PerLevelPropensity):
            fh.write("\t".join(LEVEL_RHO_HEADER) + "\n")
            for level in sorted(props.rho_by_level):
                fh.write(f"{level}\t{fmt_real(props.rho_by_level[level])}\n")
        elif isinstance(props, ConstantPropensity):
            fh.write("rho\n" + fmt_real(props.rho) + "\n")
        else:
            raise TypeError(f"cannot serialize {type(props).__name__}")


def read_propensities(path):
    header = _header(path)
    lines = _read_lines(path)
    next(lines, None)
    if header == CELL_RHO_HEADER:
        cells = {}
        users: dict[str, None] = {}
        for lineno, line in lines:
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected user, topic, rho", lineno)
            users.setdefault(parts[0])
            cells[(parts[0], int(parts[1]))] = _parse_float(parts[2], lineno)
        user_ids = list(users)
        n_topics = max(t for _, t in cells) + 1 if cells else 0
        matrix = np.full((len(user_ids), n_topics), np.nan)
        uindex = {u: k for k, u in enumerate(user_ids)}
        for (u, t), rho in cells.items():
            matrix[uindex[u], t] = rho
        if np.isnan(matrix).any():
            raise SchemaError(f"{path}: per-cell propensity file is not a complete matrix")
        return PerCellPropensity(matrix, tuple(user_ids))
    if header == LEVEL_RHO_HEADER:
        levels = {}
        for lineno, line in lines:
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip().isdigit():
                raise ParseError("expected level, rho", lineno)
            levels[int(parts[0])] = _parse_float(parts[1], lineno)
        return PerLevelPropensity(levels)
    if header == CONSTANT_RHO_HEADER:
        for lineno, line in lines:
            return ConstantPropensity(_parse_float(line, lineno))
    raise SchemaError(f"{path}: unknown propensity header {header!r}")


# -- topics and embeddings ------------------------------------------------------


def write_topics(path, topics: TopicAssignment) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(ASSIGNMENT_HEADER) + "\n")
        for item, t in topics.pairs():
            fh.write(f"{item}\t{t}\n")


def read_topics(path) -> TopicAssignment:
    if _header(path) != ASSIGNMENT_HEADER:
        raise SchemaError(f"{path}: expected header item<TAB>topic")
    pairs = []
    lines = _read_lines(path)
    next(lines, None)
    for lineno, line in lines:
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected item, topic", lineno)
        try:
            pairs.append((parts[0], int(parts[1])))
        except ValueError:
            raise ParseError(f"topic id must be an integer: {parts[1]!r}", lineno) from None
    return TopicAssignment.from_pairs(pairs)


def write_embeddings(path, node_ids, vectors) -> None:
    vectors = np.asarray(vectors)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("node\t" + "\t".join(f"v{k}" for k in range(vectors.shape[1])) + "\n")
        for node, vec in zip(node_ids, vectors):
            fh.write(node + "\t" + "\t".join(fmt_real(x) for x in vec) + "\n")


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    nodes, rows = [], []
    lines = _read_lines(path)
    next(lines, None)
    for lineno, line in lines:
        parts = line.split("\t")
        nodes.append(parts[0])
        rows.append([_parse_float(x, lineno) for x in parts[1:]])
    return nodes, np.array(rows)


# -- model files ----------------------------------------------------------------


def _row(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.atleast_1d(values))


def save_model(path, model) -> None:
    """Plain-text model file; user ids follow the numeric blocks, one per line."""
    lines = []
    if isinstance(model, FactorModel):
        n_users, n_topics = model.user_factors.shape[0], model.num_topics
        lines.append(f"pe-mf v1 {model.dim} {n_users} {n_topics}")
        lines.append(_row(model.global_mean))
        lines += [_row(b) for b in model.user_bias]
        lines += [_row(b) for b in model.topic_bias]
        lines += [_row(p) for p in model.user_factors]
        lines += [_row(q) for q in model.topic_factors]
    elif isinstance(model, ExpoMfModel):
        n_users, n_topics = model.user_factors.shape[0], model.num_topics
        lines.append(f"pe-expomf v1 {model.dim} {n_users} {n_topics}")
        lines.append(_row(model.exposure_prior))
        lines += [_row(p) for p in model.user_factors]
        lines += [_row(q) for q in model.topic_factors]
        lines.append(_row(model.lam_y))
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    lines += list(model.user_ids)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path):
    text = Path(path).read_text(encoding="utf-8").split("\n")
    head = text[0].split()
    if len(head) != 5 or head[1] != "v1" or head[0] not in ("pe-mf", "pe-expomf"):
        raise SchemaError(f"{path}: unrecognized model header {text[0]!r}")
    d, n_users, n_topics = (int(x) for x in head[2:])
    pos = 1

    def block(rows):
        nonlocal pos
        out = np.array([[float(x) for x in text[pos + k].split()] for k in range(rows)])
        pos += rows
        return out

    try:
        if head[0] == "pe-mf":
            mu = block(1)[0, 0]
            bu = block(n_users)[:, 0] if n_users else np.zeros(0)
            bt = block(n_topics)[:, 0]
            P = block(n_users).reshape(n_users, d)
            Q = block(n_topics).reshape(n_topics, d)
            users = tuple(text[pos : pos + n_users])
            return FactorModel(P, Q, bu, bt, mu, users)
        mu_t = block(1)[0]
        theta = block(n_users).reshape(n_users, d)
        beta = block(n_topics).reshape(n_topics, d)
        lam_y = block(1)[0, 0]
        users = tuple(text[pos : pos + n_users])
        return ExpoMfModel(theta, beta, mu_t, lam_y, np.zeros((0, 0)), users)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed model body ({exc})", pos + 1) from None


# -- dataset loaders -------------------------------------------------------------


def _load_whitespace_triples(path) -> InteractionTable:
    users, items, ratings = [], [], []
    for lineno, line in _read_lines(path):
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"{path}: expected 'user item rating'", lineno)
        try:
            rating = float(parts[2])
        except ValueError:
            raise ParseError(f"{path}: rating is not a number: {parts[2]!r}", lineno) from None
        if rating not in (1.0, 2.0, 3.0, 4.0, 5.0):
            raise ValidationError(f"{path}: line {lineno}: rating {parts[2]} not in 1..5")
        users.append(parts[0])
        items.append(parts[1])
        ratings.append(rating)
    table = InteractionTable(users, items, ratings)
    check_valid(table)
    return table


def table_stats(table: RatingTable) -> dict:
    return {
        "num_users": len(set(table.users.tolist())),
        f"num_{table.entity_name}s": len(set(table.entities.tolist())),
        "num_ratings": len(table),
    }


def load_yahoo(train_path, test_path) -> tuple[InteractionTable, InteractionTable]:
    """Yahoo! R3 train (self-selected) and test (uniformly random) ratings."""
    train = _load_whitespace_triples(train_path)
    test = _load_whitespace_triples(test_path)
    stats = table_stats(train)
    log.info(
        "yahoo train: %(num_users)d users, %(num_items)d items, %(num_ratings)d ratings", stats
    )
    if stats["num_users"] != 15400 or stats["num_items"] != 1000:
        log.warning("yahoo train deviates from the published 15,400 users / 1,000 items")
    return train, test


def _load_matrix(path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in _read_lines(path):
        parts = line.split()
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise ParseError(f"{path}: row has {len(parts)} columns, expected {width}", lineno)
        rows.append([_parse_float(x, lineno) for x in parts])
    return np.array(rows, dtype=np.float64)


def coat_matrix_to_table(matrix: np.ndarray) -> InteractionTable:
    rows, cols = np.nonzero(matrix)
    table = InteractionTable(
        [f"u{r}" for r in rows], [f"i{c}" for c in cols], matrix[rows, cols]
    )
    check_valid(table)
    return table


def load_item_features(path) -> np.ndarray:
    return _load_matrix(path)


def topics_from_features(features: np.ndarray, item_ids) -> TopicAssignment:
    """Every non-zero feature column is a category; unused columns are dropped."""
    used = np.flatnonzero(features.sum(axis=0) > 0)
    dense = {int(c): k for k, c in enumerate(used)}
    mapping = {}
    for j, item in enumerate(item_ids):
        cats = {dense[int(c)] for c in np.flatnonzero(features[j])}
        if cats:
            mapping[item] = cats
        else:
            log.warning("coat item %s has no category", item)
    return TopicAssignment(mapping)


def load_coat(ratings_path, propensities_path=None, topics_path=None):
    """Coat dense rating matrix -> (ratings, per-(user, item) propensities, topics).

    Zeros in the matrix are unobserved cells. Without a propensity file the
    propensities come from a logistic model on the item features.
    """
    matrix = _load_matrix(ratings_path)
    if matrix.shape != COAT_SHAPE:
        log.warning("coat matrix is %s, expected %s", matrix.shape, COAT_SHAPE)
    table = coat_matrix_to_table(matrix)
    user_ids = tuple(f"u{r}" for r in range(matrix.shape[0]))
    item_ids = tuple(f"i{c}" for c in range(matrix.shape[1]))

    features = load_item_features(topics_path) if topics_path is not None else None
    if features is not None and features.shape[0] != matrix.shape[1]:
        raise ValidationError(
            f"item feature rows ({features.shape[0]}) do not match items ({matrix.shape[1]})"
        )
    topics = topics_from_features(features, item_ids) if features is not None else None

    if propensities_path is not None:
        rho = _load_matrix(propensities_path)
        if rho.shape != matrix.shape:
            raise ValidationError(f"propensity matrix {rho.shape} != rating matrix {matrix.shape}")
        props = ItemPropensities(np.clip(rho, 1e-12, 1.0), user_ids, item_ids)
    elif features is not None:
        props = fit_logreg_propensities(matrix != 0, features, user_ids, item_ids).propensities
    else:
        props = None
    return table, props, topics
