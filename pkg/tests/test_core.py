import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pe_bias.core import (
    ConstantPropensity,
    FactorModel,
    FullPreferenceMatrix,
    InteractionTable,
    PerCellPropensity,
    PerLevelPropensity,
    TopicAssignment,
    TopicInteractionTable,
    build_index_maps,
    check_valid,
    rating_level,
    validate,
)
from pe_bias.errors import EmptyInput, MissingPropensity, ValidationError


def test_index_maps_singleton():
    users, items = build_index_maps(InteractionTable.from_triples([("uA", "i1", 4)]))
    assert users == {"uA": 0} and items == {"i1": 0}


def test_index_maps_first_appearance_order():
    t = InteractionTable.from_triples([("uA", "i1", 4), ("uB", "i1", 5), ("uA", "i2", 3)])
    users, items = build_index_maps(t)
    assert users == {"uA": 0, "uB": 1}
    assert items == {"i1": 0, "i2": 1}
    assert build_index_maps(t) == (users, items)


def test_index_maps_empty():
    with pytest.raises(EmptyInput):
        build_index_maps(InteractionTable.empty())


@given(st.lists(st.tuples(st.sampled_from("abcdef"), st.integers(0, 9)), min_size=1, max_size=30))
def test_index_maps_are_bijections(pairs):
    t = TopicInteractionTable.from_triples([(u, e, 3.0) for u, e in pairs])
    users, topics = build_index_maps(t)
    assert sorted(users.values()) == list(range(len(users)))
    assert sorted(topics.values()) == list(range(len(topics)))
    inv = {v: k for k, v in users.items()}
    assert all(inv[users[u]] == u for u in users)


def test_validate_reports_range_and_duplicates():
    t = InteractionTable.from_triples([("a", "x", 4), ("a", "y", 2), ("b", "x", 6), ("a", "x", 3)])
    problems = validate(t)
    assert "rating out of range, row 3" in problems
    assert any(p.startswith("duplicate pair") and "row 4" in p for p in problems)
    with pytest.raises(ValidationError):
        check_valid(t)


def test_validate_accepts_well_formed():
    t = InteractionTable.from_triples([("a", "x", 1), ("a", "y", 5), ("b", "x", 2.5)])
    assert validate(t) == []
    check_valid(t)


@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 3), st.floats(0, 6)), max_size=15))
def test_validate_matches_invariants(rows):
    t = TopicInteractionTable.from_triples(rows)
    pairs = [(u, e) for u, e, _ in rows]
    ok = all(1 <= r <= 5 for *_, r in rows) and len(set(pairs)) == len(pairs)
    assert (validate(t) == []) == ok


@pytest.mark.parametrize(
    "value,level", [(1.0, 1), (1.49, 1), (1.5, 2), (2.5, 3), (3.5, 4), (4.5, 5), (5.0, 5), (4.499, 4)]
)
def test_rating_level_half_away_from_zero(value, level):
    assert rating_level([value])[0] == level


def test_table_equality_ignores_order():
    a = TopicInteractionTable.from_triples([("u", 0, 3.0), ("v", 1, 4.0)])
    b = TopicInteractionTable.from_triples([("v", 1, 4.0), ("u", 0, 3.0)])
    assert a == b
    assert a != TopicInteractionTable.from_triples([("v", 1, 4.0)])
    assert a != InteractionTable.from_triples([("u", "0", 3.0), ("v", "1", 4.0)])


def test_topic_assignment_validation():
    good = TopicAssignment.from_pairs([("a", 0), ("b", 1), ("b", 0)])
    assert good.validate() == [] and good.num_topics == 2
    assert good["b"] == frozenset({0, 1})
    gap = TopicAssignment.from_pairs([("a", 0), ("b", 2)])
    assert any("without items" in p for p in gap.validate())


def test_full_matrix_range_and_cells():
    with pytest.raises(ValidationError):
        FullPreferenceMatrix(np.array([[0.5, 3.0]]))
    Y = FullPreferenceMatrix(np.array([[1.0, 2.0], [3.0, 5.0]]))
    cells = Y.cells(np.array([[True, False], [False, True]]))
    assert cells == TopicInteractionTable.from_triples([("u0", 0, 1.0), ("u1", 1, 5.0)])


def test_propensity_models_clip_and_lookup():
    t = TopicInteractionTable.from_triples([("u0", 0, 5.0), ("u1", 1, 1.2)])
    assert np.all(ConstantPropensity(0.001).lookup(t) == 0.01)
    lvl = PerLevelPropensity({1: 0.004, 2: 0.1, 3: 0.2, 4: 0.3, 5: 2.0})
    assert lvl.lookup(t).tolist() == [1.0, 0.01]
    cell = PerCellPropensity(np.array([[0.5, 0.2], [0.3, 0.4]]), ("u0", "u1"))
    assert cell.lookup(t).tolist() == [0.5, 0.4]
    with pytest.raises(MissingPropensity):
        cell.lookup(TopicInteractionTable.from_triples([("zz", 0, 3.0)]))
    with pytest.raises(MissingPropensity):
        cell.lookup(TopicInteractionTable.from_triples([("u0", 5, 3.0)]))


def test_factor_model_prediction_and_clamp():
    m = FactorModel(
        np.array([[1.0], [2.0]]), np.array([[1.0], [3.0]]), np.array([0.0, 0.5]),
        np.array([0.1, 0.0]), 3.0, ("a", "b"),
    )
    assert m.predict(["a", "b"], [0, 1]).tolist() == pytest.approx([4.1, 9.5])
    assert m.predict(["b"], [1], clamp=True).tolist() == [5.0]
    # unknown user keeps the topic bias and global mean
    assert m.predict(["zz"], [0]).tolist() == pytest.approx([3.1])
    assert m.predict_matrix().shape == (2, 2)
    with pytest.raises(ValueError):
        FactorModel(np.array([[np.nan]]), np.zeros((1, 1)), np.zeros(1), np.zeros(1), 0.0)
