from pathlib import Path

import numpy as np
import pytest
import yaml

from pe_bias.config import ExperimentConfig
from pe_bias.evaluation import paired_ttest
from pe_bias.experiment import (
    CellResult,
    aggregate,
    aligned_table,
    build_grid,
    cell_seeds,
    run_experiment,
    summary_tsv,
)
from pe_bias.seeding import resolve_seeds

TINY = {
    "synth": {"num_users": 60, "num_topics": 8},
    "num_seeds": 2,
    "sweep": [0.5, 1.0],
    "grid": {"dims": [2], "regs": [0.01], "learning_rates": [0.01]},
    "train": {"epochs": 2},
    "folds": 2,
    "expomf": {"max_iters": 2},
}


def fake_cells(config, values):
    """values[(setting, seed)] = {method: mae}; other metrics derived from it."""
    cells = {}
    for key, by_method in values.items():
        cell = CellResult(*key)
        for method, mae in by_method.items():
            cell.scores[method] = {"mae": mae, "mse": mae * mae, "ndcg@3": 1.0 - mae / 10}
            cell.chosen[method] = {"dim": 1, "reg": 0.1, "lr": 0.01}
        cells[key] = cell
    return cells


def test_grid_size_and_expomf_single_rate():
    config = ExperimentConfig.load()
    assert len(build_grid(config, 0, "MF")) == 45
    assert len(build_grid(config, 0, "ExpoMF")) == 15
    assert all(g.seed == 7 for g in build_grid(config, 7, "MF-IPS"))


def test_cell_seeds_distinct_and_split_shared():
    config = ExperimentConfig.load()
    a, b = cell_seeds(config, 0, 0), cell_seeds(config, 1, 0)
    assert len(set(a.values())) == len(a)
    assert a["data"] != b["data"] and a["split"] == b["split"] and a["embed"] == b["embed"]
    assert cell_seeds(config, 0, 1)["split"] != a["split"]


def test_aggregate_means_and_significance():
    config = ExperimentConfig.from_dict({"sweep": [1.0], "num_seeds": 5, "methods": ["MF", "MF-IPS"]})
    mf = [1.0, 1.1, 0.9, 1.05, 0.95]
    ips = [0.5, 0.6, 0.45, 0.5, 0.52]
    cells = fake_cells(config, {(0, j): {"MF": mf[j], "MF-IPS": ips[j]} for j in range(5)})
    res = aggregate(config, cells)
    assert res.mean(0, "MF", "mae") == pytest.approx(np.mean(mf))
    row = res.test(0, "MF-IPS", "mae")
    assert row["p"] == pytest.approx(paired_ttest(ips, mf).p)
    assert row["better"] and row["significant"]
    assert res.per_seed(0, "MF-IPS", "mae") == ips
    table = aligned_table(res)
    assert table.splitlines()[0].split() == ["Exp.", "setting", "Method", "MAE", "MSE", "NDCG@3"]
    assert "†" in [l for l in table.splitlines() if "MF-IPS" in l][0]
    tsv = summary_tsv(res).splitlines()
    assert tsv[1].split("\t")[:2] == ["MF", "alpha=1"] and tsv[1].endswith("\t-")
    assert tsv[2].split("\t")[2] == f"{np.mean(ips):.6f}"


def test_aggregate_excludes_failed_cells():
    config = ExperimentConfig.from_dict({"sweep": [1.0], "num_seeds": 3, "methods": ["MF", "MF-IPS"]})
    cells = fake_cells(config, {(0, 0): {"MF": 1.0, "MF-IPS": 0.5}, (0, 1): {"MF": 1.2, "MF-IPS": 0.7}})
    broken = CellResult(0, 2, error="ConfigError: boom")
    cells[(0, 2)] = broken
    res = aggregate(config, cells)
    assert res.errors == [{"setting": "alpha=1", "seed": 2, "error": "ConfigError: boom"}]
    assert res.mean(0, "MF", "mae") == pytest.approx(1.1)


def test_run_experiment_persists_cells(tmp_path):
    config = ExperimentConfig.from_dict(TINY)
    res = run_experiment(config, tmp_path)
    assert res.ok
    assert len(res.summary_rows) == 2 * 3
    for s in ("alpha=0.5", "alpha=1"):
        for j in ("0", "1"):
            scores = (tmp_path / s / j / "scores.tsv").read_text().splitlines()
            assert scores[0].startswith("method\tmae") and len(scores) == 4
            meta = yaml.safe_load((tmp_path / s / j / "cell.yaml").read_text())
            assert meta["error"] is None and set(meta["seeds"]) >= {"data", "train"}
    # every summary mean is the mean of the persisted per-seed rows
    per_seed = {}
    for s in ("alpha=0.5", "alpha=1"):
        for j in ("0", "1"):
            for line in (tmp_path / s / j / "scores.tsv").read_text().splitlines()[1:]:
                parts = line.split("\t")
                per_seed.setdefault((parts[0], s), []).append(float(parts[1]))
    for line in (tmp_path / "summary.tsv").read_text().splitlines()[1:]:
        method, setting, mae = line.split("\t")[:3]
        assert float(mae) == pytest.approx(np.mean(per_seed[(method, setting)]), abs=1e-6)


def write_fake_yahoo(tmp_path, seed=0):
    """Two item communities; biased log favours high ratings, test log is uniform."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for u in range(60):
        block = u % 2
        taste = rng.integers(1, 6, 12)
        items = rng.permutation(12)
        for i in items[:5]:
            if rng.random() < 0.3 + 0.15 * taste[i]:
                train.append(f"{u}\t{block}{i:02d}\t{taste[i]}")
        # the uniform log spans both communities so users see several topics
        for b in (0, 1):
            for i in items[5:9]:
                test.append(f"{u} {b}{i:02d} {taste[i]}")
    (tmp_path / "train.txt").write_text("\n".join(train) + "\n")
    (tmp_path / "test.txt").write_text("\n".join(test) + "\n")
    return tmp_path / "train.txt", tmp_path / "test.txt"


def test_yahoo_pipeline_on_fake_files(tmp_path):
    tr, te = write_fake_yahoo(tmp_path)
    config = ExperimentConfig.from_dict({
        **TINY, "mode": "semi-synthetic", "dataset": "yahoo", "sweep": [2, 3],
        "paths": {"yahoo_train": str(tr), "yahoo_test": str(te)},
        "topics": {"graph_fraction": 0.5, "dim": 8, "walks_per_node": 3, "walk_length": 10, "epochs": 2},
    })
    res = run_experiment(config, tmp_path / "out")
    assert res.ok, res.errors
    assert [r["setting"] for r in res.summary_rows[::3]] == ["clusters=2", "clusters=3"]
    notes = res.cells[(1, 0)].notes
    assert 1 <= notes["topics"] <= 3


def test_coat_pipeline_on_fake_files(tmp_path):
    rng = np.random.default_rng(1)
    train = np.where(rng.random((30, 12)) < 0.3, rng.integers(1, 6, (30, 12)), 0)
    test = np.where(rng.random((30, 12)) < 0.3, rng.integers(1, 6, (30, 12)), 0)
    features = np.zeros((12, 4), dtype=int)
    features[np.arange(12), np.arange(12) % 4] = 1
    for name, arr in (("train", train), ("test", test), ("features", features)):
        np.savetxt(tmp_path / f"{name}.ascii", arr, fmt="%d")
    config = ExperimentConfig.from_dict({
        **TINY, "mode": "semi-synthetic", "dataset": "coat", "sweep": ["logreg"],
        "paths": {"coat_train": str(tmp_path / "train.ascii"), "coat_test": str(tmp_path / "test.ascii"),
                  "coat_features": str(tmp_path / "features.ascii")},
    })
    res = run_experiment(config, tmp_path / "out")
    assert res.ok, res.errors
    assert res.summary_rows[0]["setting"] == "coat=logreg"


def test_published_seed_vectors():
    rows = (Path(__file__).parent / "data" / "seed_vectors.tsv").read_text().splitlines()[1:]
    assert len(rows) == 120
    seen = set()
    for row in rows:
        master, setting, index, stage, seed = row.split("\t")
        assert resolve_seeds(int(master), int(setting), int(index), stage) == int(seed)
        seen.add(int(seed))
    assert len(seen) == len(rows)
