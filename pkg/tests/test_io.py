import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from pe_bias import io
from pe_bias.core import (
    ConstantPropensity,
    InteractionTable,
    PerCellPropensity,
    PerLevelPropensity,
    TopicAssignment,
    TopicInteractionTable,
)
from pe_bias.errors import ParseError, SchemaError, ValidationError
from pe_bias.estimators import TrainConfig, train_expomf, train_mf
from pe_bias.synth import SynthConfig, generate_dataset


@pytest.mark.parametrize("x", [4.5, 1.0, 1 / 3, 2.718281828459045, 1e-300, 123456.789])
def test_fmt_real_round_trips(x):
    s = io.fmt_real(x)
    assert float(s) == x
    assert len(s.replace(".", "").replace("-", "").split("e")[0]) >= 6


def test_rating_written_as_decimal_reparses_exactly(tmp_path):
    path = tmp_path / "t.tsv"
    path.write_text("user\ttopic\trating\nu\t0\t4.500000\n")
    assert io.read_tsv(path).ratings.tolist() == [4.5]


@settings(max_examples=30, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c x"]), st.integers(0, 4), st.floats(1, 5)),
                unique_by=lambda r: r[:2], max_size=12))
def test_topic_table_round_trip(tmp_path, rows):
    table = TopicInteractionTable.from_triples(rows)
    path = tmp_path / "rt.tsv"
    io.write_tsv(path, table)
    assert io.read_tsv(path) == table


def test_item_table_round_trip_sorted(tmp_path):
    table = InteractionTable.from_triples([("v", "i2", 3), ("u", "i1", 1.25), ("v", "i1", 5)])
    path = tmp_path / "items.tsv"
    io.write_tsv(path, table)
    lines = path.read_text().splitlines()
    assert lines[0] == "user\titem\trating"
    assert [l.split("\t")[:2] for l in lines[1:]] == [["v", "i2"], ["v", "i1"], ["u", "i1"]]
    back = io.read_tsv(path)
    assert isinstance(back, InteractionTable) and back == table


def test_header_only_is_empty(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("user\ttopic\trating\n")
    assert len(io.read_tsv(path)) == 0


def test_unknown_header(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("who\twhat\thow\n")
    with pytest.raises(SchemaError):
        io.read_tsv(path)


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("user\ttopic\trating\nu\t0\t3\nu\t1\tlots\n")
    with pytest.raises(ParseError) as err:
        io.read_tsv(path)
    assert err.value.line == 3


@pytest.mark.parametrize("props", [
    ConstantPropensity(0.25),
    PerLevelPropensity({1: 0.01, 2: 0.02, 3: 0.1, 4: 0.3, 5: 0.7}),
    PerCellPropensity(np.array([[0.1, 0.2, 1 / 3], [0.5, 0.05, 1.0]]), ("a", "b")),
])
def test_propensity_round_trip(tmp_path, props):
    path = tmp_path / "rho.tsv"
    io.write_propensities(path, props)
    back = io.read_propensities(path)
    assert type(back) is type(props)
    table = TopicInteractionTable.from_triples([("a", 0, 1.0), ("b", 2, 5.0), ("a", 1, 3.0)])
    assert np.array_equal(back.lookup(table), props.lookup(table))


def test_incomplete_cell_propensities_rejected(tmp_path):
    path = tmp_path / "rho.tsv"
    path.write_text("user\ttopic\trho\na\t0\t0.5\na\t2\t0.5\n")
    with pytest.raises(SchemaError):
        io.read_propensities(path)


def test_topics_and_embeddings_round_trip(tmp_path):
    topics = TopicAssignment.from_pairs([("x", 0), ("y", 1), ("y", 0)])
    io.write_topics(tmp_path / "topics.tsv", topics)
    assert io.read_topics(tmp_path / "topics.tsv") == topics
    vecs = np.random.default_rng(0).normal(size=(3, 4))
    io.write_embeddings(tmp_path / "emb.tsv", ["u:a", "i:x", "i:y"], vecs)
    nodes, back = io.read_embeddings(tmp_path / "emb.tsv")
    assert nodes == ["u:a", "i:x", "i:y"] and np.array_equal(back, vecs)


@pytest.fixture(scope="module")
def tiny_data():
    _, train, test, props = generate_dataset(SynthConfig(num_users=40, num_topics=6, seed=1))
    return train, test, props


def test_mf_model_file_round_trip(tmp_path, tiny_data):
    train, test, _ = tiny_data
    model = train_mf(train, TrainConfig(dim=3, epochs=2), num_topics=6).model
    path = tmp_path / "mf.model"
    io.save_model(path, model)
    head = path.read_text().splitlines()[0]
    assert head == f"pe-mf v1 3 {len(model.user_ids)} 6"
    back = io.load_model(path)
    assert np.array_equal(back.predict_table(test), model.predict_table(test))
    assert back.user_ids == model.user_ids


def test_expomf_model_file_round_trip(tmp_path, tiny_data):
    train, test, _ = tiny_data
    model = train_expomf(train, TrainConfig(dim=2, reg=0.1), num_topics=6, max_iters=3)
    path = tmp_path / "expo.model"
    io.save_model(path, model)
    assert path.read_text().startswith("pe-expomf v1 2 ")
    back = io.load_model(path)
    assert np.array_equal(back.predict_table(test), model.predict_table(test))
    assert np.array_equal(back.exposure_prior, model.exposure_prior)


def test_bad_model_header(tmp_path):
    path = tmp_path / "m"
    path.write_text("pe-mf v9 1 1 1\n")
    with pytest.raises(SchemaError):
        io.load_model(path)


def write_yahoo(tmp_path, train_lines, test_lines=("1 1 3",)):
    tr, te = tmp_path / "train.txt", tmp_path / "test.txt"
    tr.write_text("\n".join(train_lines) + "\n")
    te.write_text("\n".join(test_lines) + "\n")
    return tr, te


def test_yahoo_tab_and_space_lines(tmp_path, caplog):
    tr, te = write_yahoo(tmp_path, ["1\t518\t4", "1 7 5", "2  518 1"])
    with caplog.at_level(logging.WARNING):
        train, test = io.load_yahoo(tr, te)
    assert ("1", "518", 4.0) in list(train)
    assert io.table_stats(train) == {"num_users": 2, "num_items": 2, "num_ratings": 3}
    assert "15,400" in caplog.text


def test_yahoo_bad_token(tmp_path):
    tr, te = write_yahoo(tmp_path, ["1 2 3", "1 518 six"])
    with pytest.raises(ParseError) as err:
        io.load_yahoo(tr, te)
    assert err.value.line == 2


def test_yahoo_rating_out_of_range(tmp_path):
    tr, te = write_yahoo(tmp_path, ["1 2 7"])
    with pytest.raises(ValidationError):
        io.load_yahoo(tr, te)


def test_coat_matrix_cells(tmp_path, caplog):
    ratings = np.zeros((3, 8), dtype=int)
    ratings[0, 7] = 5
    ratings[1, 2] = 3
    ratings[2, 0] = 1
    features = np.zeros((8, 3), dtype=int)
    features[:, 0] = 1
    features[::2, 2] = 1
    np.savetxt(tmp_path / "train.ascii", ratings, fmt="%d")
    np.savetxt(tmp_path / "features.ascii", features, fmt="%d")
    with caplog.at_level(logging.WARNING):
        table, props, topics = io.load_coat(tmp_path / "train.ascii", topics_path=tmp_path / "features.ascii")
    assert "expected (290, 300)" in caplog.text
    assert ("u0", "i7", 5.0) in list(table) and len(table) == 3
    # unused feature column 1 is dropped, column 2 becomes topic 1
    assert topics["i0"] == frozenset({0, 1}) and topics["i1"] == frozenset({0})
    assert props.matrix.shape == (3, 8) and np.all(props.matrix > 0)


def test_coat_given_propensities(tmp_path):
    np.savetxt(tmp_path / "r.ascii", np.array([[0, 4], [2, 0]]), fmt="%d")
    np.savetxt(tmp_path / "p.ascii", np.array([[0.1, 0.2], [0.3, 0.4]]))
    _, props, topics = io.load_coat(tmp_path / "r.ascii", propensities_path=tmp_path / "p.ascii")
    assert props.matrix.tolist() == [[0.1, 0.2], [0.3, 0.4]] and topics is None
