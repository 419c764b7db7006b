"""End-to-end experiment runner: data -> propensities -> CV -> train -> unbiased evaluation."""

from __future__ import annotations

import functools
import itertools
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .config import ExperimentConfig
from .core import InteractionTable, TopicInteractionTable
from .estimators.expomf import train_expomf
from .estimators.mf import TrainConfig, train_mf
from .evaluation import cross_validate, ndcg_at_k, paired_ttest, rating_metrics
from .io import coat_matrix_to_table, fmt_real, load_item_features, load_yahoo, topics_from_features
from .io import _load_matrix as load_matrix
from .pe_sim import (
    ItemPropensities,
    aggregate_to_topics,
    estimate_propensities_nb,
    fit_logreg_propensities,
    lift_item_propensities_to_topics,
)
from .seeding import resolve_seeds
from .synth import SynthConfig, generate_dataset
from .topic_discovery import EmbeddingSettings, discover_topics, embed_items

log = logging.getLogger(__name__)

METRICS = ("mae", "mse", "ndcg@3")
LOWER_IS_BETTER = {"mae": True, "mse": True, "ndcg@3": False}
SIGNIFICANCE = 0.01


@dataclass
class PreparedData:
    train: TopicInteractionTable
    test: TopicInteractionTable
    props: object
    num_topics: int
    num_cells: int
    notes: dict = field(default_factory=dict)


@dataclass
class CellResult:
    setting_index: int
    seed_index: int
    scores: dict = field(default_factory=dict)  # method -> {metric: value}
    chosen: dict = field(default_factory=dict)  # method -> hyperparameters
    notes: dict = field(default_factory=dict)
    error: str | None = None


# -- data preparation -------------------------------------------------------------


def _synthetic_data(config: ExperimentConfig, alpha, seed) -> PreparedData:
    synth = SynthConfig(alpha=float(alpha), seed=seed, **config.synth)
    _, train, test, props = generate_dataset(synth)
    n_cells = synth.num_users * synth.num_topics
    return PreparedData(train, test, props, synth.num_topics, n_cells, {"train_size": len(train)})


@functools.lru_cache(maxsize=2)
def _yahoo_tables(train_path, test_path):
    return load_yahoo(train_path, test_path)


@functools.lru_cache(maxsize=4)
def _yahoo_embedding(train_path, test_path, seed_split, seed_embed, topic_items):
    """Graph + embeddings from the reserved MCAR fraction; shared across cluster counts."""
    _, test = _yahoo_tables(train_path, test_path)
    settings = dict(topic_items)
    fraction = settings.pop("graph_fraction")
    settings.pop("gmm_max_iters")
    rng = np.random.default_rng(seed_split)
    reserved = rng.random(len(test)) < fraction
    graph, emb = embed_items(test.subset(reserved), EmbeddingSettings(**settings), seed=seed_embed)
    return reserved, graph, emb


def _restrict_to_topics(table: InteractionTable, topics) -> tuple[InteractionTable, int]:
    keep = np.fromiter((i in topics for i in table.items.tolist()), bool, len(table))
    return table.subset(keep), int((~keep).sum())


def _yahoo_data(config: ExperimentConfig, clusters, seeds: dict) -> PreparedData:
    paths = config.paths
    train_items, test_items = _yahoo_tables(paths["yahoo_train"], paths["yahoo_test"])
    reserved, graph, emb = _yahoo_embedding(
        paths["yahoo_train"], paths["yahoo_test"], seeds["split"], seeds["embed"],
        tuple(sorted(config.topics.items())),
    )
    topics, gmm = discover_topics(
        graph, emb, int(clusters), seed=seeds["gmm"], max_iters=config.topics["gmm_max_iters"]
    )
    train_items, dropped_train = _restrict_to_topics(train_items, topics)
    sample_items = test_items.subset(reserved)
    eval_items, dropped_test = _restrict_to_topics(test_items.subset(~reserved), topics)
    if dropped_train or dropped_test:
        log.warning(
            "dropped %d train / %d test ratings on items absent from the topic graph",
            dropped_train, dropped_test,
        )
    train = aggregate_to_topics(train_items, topics)
    test = aggregate_to_topics(eval_items, topics)
    sample = aggregate_to_topics(sample_items, topics)
    n_topics = topics.num_topics
    n_cells = len(set(train.users.tolist())) * n_topics
    props = estimate_propensities_nb(train, sample, n_cells)
    notes = {
        "topics": n_topics,
        "gmm_log_likelihood": gmm.log_likelihood,
        "dropped_train_ratings": dropped_train,
        "dropped_test_ratings": dropped_test,
    }
    return PreparedData(train, test, props, n_topics, n_cells, notes)


def _coat_data(config: ExperimentConfig, seeds: dict) -> PreparedData:
    paths = config.paths
    train_m = load_matrix(paths["coat_train"])
    test_m = load_matrix(paths["coat_test"])
    features = load_item_features(paths["coat_features"])
    user_ids = tuple(f"u{r}" for r in range(train_m.shape[0]))
    item_ids = tuple(f"i{c}" for c in range(train_m.shape[1]))
    topics = topics_from_features(features, item_ids)
    if paths.get("coat_propensities"):
        item_props = ItemPropensities(load_matrix(paths["coat_propensities"]), user_ids, item_ids)
    else:
        item_props = fit_logreg_propensities(
            train_m != 0, features, user_ids, item_ids, seed=seeds["split"] % (2**32)
        ).propensities
    props = lift_item_propensities_to_topics(item_props, topics)
    train = aggregate_to_topics(coat_matrix_to_table(train_m), topics)
    test = aggregate_to_topics(coat_matrix_to_table(test_m), topics)
    n_topics = topics.num_topics
    return PreparedData(train, test, props, n_topics, len(user_ids) * n_topics, {"topics": n_topics})


# -- one (setting, seed) cell ---------------------------------------------------------


def build_grid(config: ExperimentConfig, seed: int, method: str) -> list[TrainConfig]:
    g, t = config.grid, config.train
    lrs = g["learning_rates"] if method != "ExpoMF" else g["learning_rates"][:1]
    return [
        TrainConfig(
            dim=int(d), reg=float(r), learning_rate=float(lr), seed=seed,
            epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), loss=t["loss"],
        )
        for d, r, lr in itertools.product(g["dims"], g["regs"], lrs)
    ]


def _fitter(method, data: PreparedData, config: ExperimentConfig):
    if method == "MF":
        return lambda tr, cfg: train_mf(tr, cfg, None, num_topics=data.num_topics).model
    if method == "MF-IPS":
        return lambda tr, cfg: train_mf(
            tr, cfg, data.props, num_topics=data.num_topics, num_cells=data.num_cells
        ).model
    return lambda tr, cfg: train_expomf(
        tr, cfg, num_topics=data.num_topics,
        max_iters=int(config.expomf["max_iters"]), lam_y=float(config.expomf["lam_y"]),
    )


def cell_seeds(config: ExperimentConfig, setting_index: int, seed_index: int) -> dict:
    m = int(config.master_seed)
    return {
        "data": resolve_seeds(m, setting_index, seed_index, "data"),
        "split": resolve_seeds(m, 0, seed_index, "split"),
        "embed": resolve_seeds(m, 0, seed_index, "embed"),
        "gmm": resolve_seeds(m, setting_index, seed_index, "gmm"),
        "cv": resolve_seeds(m, setting_index, seed_index, "cv"),
        "train": resolve_seeds(m, setting_index, seed_index, "train"),
    }


def prepare_data(config: ExperimentConfig, setting_index: int, seed_index: int) -> PreparedData:
    value = config.sweep[setting_index]
    seeds = cell_seeds(config, setting_index, seed_index)
    if config.mode == "fully-synthetic":
        return _synthetic_data(config, value, seeds["data"])
    if config.dataset == "coat":
        return _coat_data(config, seeds)
    return _yahoo_data(config, value, seeds)


def run_cell(config: ExperimentConfig, setting_index: int, seed_index: int) -> CellResult:
    result = CellResult(setting_index, seed_index)
    try:
        seeds = cell_seeds(config, setting_index, seed_index)
        data = prepare_data(config, setting_index, seed_index)
        result.notes = dict(data.notes, train_rows=len(data.train), test_rows=len(data.test))
        for method in config.methods:
            fit = _fitter(method, data, config)
            grid = build_grid(config, seeds["train"], method)
            best, _ = cross_validate(
                data.train, grid, data.props, fit, folds=int(config.folds), seed=seeds["cv"]
            )
            model = fit(data.train, best)
            mae, mse = rating_metrics(data.test, model)
            result.scores[method] = {"mae": mae, "mse": mse, "ndcg@3": ndcg_at_k(data.test, model, 3)}
            result.chosen[method] = {"dim": best.dim, "reg": best.reg, "lr": best.learning_rate}
    except Exception as exc:  # one failing cell must not stop the others
        result.error = f"{type(exc).__name__}: {exc}"
        log.error("cell (%d, %d) failed: %s", setting_index, seed_index, result.error)
        log.debug("%s", traceback.format_exc())
    return result


def _run_cell_star(args):
    return run_cell(*args)


# -- aggregation and reporting ---------------------------------------------------------


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    cells: dict  # (setting_index, seed_index) -> CellResult
    summary_rows: list
    significance: list
    errors: list

    @property
    def ok(self) -> bool:
        return not self.errors

    def mean(self, setting_index: int, method: str, metric: str) -> float:
        for row in self.summary_rows:
            if row["setting_index"] == setting_index and row["method"] == method:
                return row[metric]
        raise KeyError((setting_index, method))

    def per_seed(self, setting_index: int, method: str, metric: str) -> list[float]:
        return [
            cell.scores[method][metric]
            for (s, _), cell in sorted(self.cells.items())
            if s == setting_index and cell.error is None
        ]

    def test(self, setting_index: int, method: str, metric: str) -> dict:
        for row in self.significance:
            if (row["setting_index"], row["method"], row["metric"]) == (setting_index, method, metric):
                return row
        raise KeyError((setting_index, method, metric))


def _fmt(x) -> str:
    return "nan" if x is None or not np.isfinite(x) else f"{x:.6f}"


def _fmt_p(x) -> str:
    return "-" if x is None else f"{x:.6g}"


def aggregate(config: ExperimentConfig, cells: dict) -> ExperimentResults:
    summary, sig, errors = [], [], []
    for (s, j), cell in sorted(cells.items()):
        if cell.error is not None:
            errors.append({"setting": config.setting_label(config.sweep[s]), "seed": j, "error": cell.error})
    for s, value in enumerate(config.sweep):
        label = config.setting_label(value)
        good = [c for (si, _), c in sorted(cells.items()) if si == s and c.error is None]
        for method in config.methods:
            row = {"setting_index": s, "setting": label, "method": method, "n": len(good)}
            for metric in METRICS:
                vals = [c.scores[method][metric] for c in good]
                row[metric] = float(np.mean(vals)) if vals else float("nan")
            row["p_vs_mf"] = None
            if method != "MF" and "MF" in config.methods and len(good) >= 2:
                for metric in METRICS:
                    a = [c.scores[method][metric] for c in good]
                    b = [c.scores["MF"][metric] for c in good]
                    res = paired_ttest(a, b)
                    better = (np.mean(a) < np.mean(b)) if LOWER_IS_BETTER[metric] else (np.mean(a) > np.mean(b))
                    sig.append({
                        "setting_index": s, "setting": label, "method": method, "metric": metric,
                        "t": res.t, "p": res.p, "better": bool(better),
                        "significant": bool(better and res.p < SIGNIFICANCE),
                    })
                row["p_vs_mf"] = next(r["p"] for r in sig if r["setting_index"] == s
                                      and r["method"] == method and r["metric"] == "mae")
            summary.append(row)
    return ExperimentResults(config, cells, summary, sig, errors)


def summary_tsv(results: ExperimentResults) -> str:
    lines = ["method\tsetting\tmae\tmse\tndcg@3\tp_vs_mf"]
    for row in results.summary_rows:
        lines.append("\t".join([
            row["method"], row["setting"], _fmt(row["mae"]), _fmt(row["mse"]),
            _fmt(row["ndcg@3"]), _fmt_p(row["p_vs_mf"]),
        ]))
    return "\n".join(lines) + "\n"


def aligned_table(results: ExperimentResults) -> str:
    """Human-readable table; a dagger marks a significant improvement over MF (p < 0.01)."""
    marks = {
        (r["setting_index"], r["method"], r["metric"]): r["significant"] for r in results.significance
    }
    header = ["Exp. setting", "Method", "MAE", "MSE", "NDCG@3"]
    body = []
    for row in results.summary_rows:
        cells = [row["setting"], row["method"]]
        for metric in METRICS:
            dagger = "†" if marks.get((row["setting_index"], row["method"], metric)) else ""
            cells.append(f"{row[metric]:.4f}{dagger}")
        body.append(cells)
    widths = [max(len(r[k]) for r in [header] + body) for k in range(len(header))]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    out.append("  ".join("-" * w for w in widths))
    for r in body:
        out.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(out) + "\n"


def write_outputs(results: ExperimentResults, outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    config = results.config
    for (s, j), cell in sorted(results.cells.items()):
        cell_dir = outdir / config.setting_label(config.sweep[s]) / str(j)
        cell_dir.mkdir(parents=True, exist_ok=True)
        lines = ["method\tmae\tmse\tndcg@3\tdim\treg\tlr"]
        for method, sc in cell.scores.items():
            ch = cell.chosen[method]
            lines.append("\t".join([
                method, fmt_real(sc["mae"]), fmt_real(sc["mse"]), fmt_real(sc["ndcg@3"]),
                str(ch["dim"]), fmt_real(ch["reg"]), fmt_real(ch["lr"]),
            ]))
        (cell_dir / "scores.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        meta = {"seeds": cell_seeds(config, s, j), "notes": cell.notes, "error": cell.error}
        (cell_dir / "cell.yaml").write_text(yaml.safe_dump(_plain(meta), sort_keys=True), encoding="utf-8")

    (outdir / "summary.tsv").write_text(summary_tsv(results), encoding="utf-8")
    (outdir / "summary.txt").write_text(aligned_table(results), encoding="utf-8")
    sig_lines = ["method\tsetting\tmetric\tt\tp\tsignificant"]
    for r in results.significance:
        sig_lines.append(f"{r['method']}\t{r['setting']}\t{r['metric']}\t{r['t']:.6g}\t{r['p']:.6g}\t{int(r['significant'])}")
    (outdir / "significance.tsv").write_text("\n".join(sig_lines) + "\n", encoding="utf-8")
    err_lines = ["setting\tseed\terror"] + [f"{e['setting']}\t{e['seed']}\t{e['error']}" for e in results.errors]
    (outdir / "errors.tsv").write_text("\n".join(err_lines) + "\n", encoding="utf-8")
    (outdir / "config.echo").write_text(yaml.safe_dump(_plain(config.as_dict()), sort_keys=True), encoding="utf-8")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def run_experiment(config: ExperimentConfig, outdir=None) -> ExperimentResults:
    jobs = [
        (config, s, j) for s in range(len(config.sweep)) for j in range(int(config.num_seeds))
    ]
    workers = int(config.workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_cell_star, jobs))
    else:
        done = [run_cell(*job) for job in jobs]
    cells = {(c.setting_index, c.seed_index): c for c in done}
    results = aggregate(config, cells)
    if outdir is not None:
        write_outputs(results, outdir)
    return results
