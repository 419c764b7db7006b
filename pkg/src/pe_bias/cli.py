"""Command-line entry point: ``pe-bias <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import io
from .config import ExperimentConfig, parse_overrides
from .core import TopicAssignment, check_valid
from .errors import ConfigError, PEBiasError
from .estimators.expomf import train_expomf
from .estimators.mf import TrainConfig, train_mf
from .evaluation import cross_validate, ndcg_at_k, rating_metrics
from .experiment import build_grid, run_experiment
from .pe_sim import aggregate_to_topics, estimate_propensities_nb, topic_rating_counts
from .synth import SynthConfig, generate_dataset
from .topic_discovery import EmbeddingSettings, discover_topics, embed_items

log = logging.getLogger("pe_bias")


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_synth_gen(args) -> int:
    config = SynthConfig(
        num_users=args.num_users, num_topics=args.num_topics, dim=args.dim, alpha=args.alpha,
        sparsity=args.sparsity, decay=args.decay, test_rate=args.test_rate, seed=args.seed,
    )
    _, train, test, props = generate_dataset(config)
    out = _outdir(args.out)
    io.write_tsv(out / "train.tsv", train)
    io.write_tsv(out / "test.tsv", test)
    io.write_propensities(out / "propensities.tsv", props)
    (out / "config.echo").write_text(yaml.safe_dump(config.as_dict(), sort_keys=True))
    print(f"train {len(train)} rows, test {len(test)} rows -> {out}")
    return 0


def cmd_topics(args) -> int:
    table = io.read_tsv(args.ratings)
    settings = EmbeddingSettings(
        dim=args.embedding_dim, walks_per_node=args.walks_per_node, walk_length=args.walk_length,
        window=args.window, negatives=args.negatives, epochs=args.epochs,
    )
    graph, emb = embed_items(table, settings, seed=args.seed)
    topics, gmm = discover_topics(graph, emb, args.clusters, seed=args.seed + 2)
    out = _outdir(args.out)
    io.write_topics(out / "topics.tsv", topics)
    io.write_embeddings(out / "embeddings.tsv", emb.node_ids, emb.vectors)
    sizes = sorted(np.bincount([t for _, t in topics.pairs()]).tolist(), reverse=True)
    report = {
        "K": args.clusters,
        "topics": topics.num_topics,
        "final_log_likelihood": float(gmm.log_likelihood),
        "em_iterations": len(gmm.trace) - 1,
        "cluster_sizes": sizes,
        "skipgram_loss": [float(x) for x in emb.loss_trace],
    }
    (out / "fit_report.yaml").write_text(yaml.safe_dump(report, sort_keys=False))
    print(f"K={args.clusters} log-likelihood={gmm.log_likelihood:.4f} sizes={sizes}")
    return 0


def cmd_simulate_pe(args) -> int:
    ratings = io.read_tsv(args.ratings)
    unbiased = io.read_tsv(args.test_ratings)
    topics = io.read_topics(args.topics)
    rng = np.random.default_rng(args.seed)
    reserved = rng.random(len(unbiased)) < args.sample_fraction
    train = aggregate_to_topics(ratings, topics)
    test = aggregate_to_topics(unbiased.subset(~reserved), topics)
    sample = aggregate_to_topics(unbiased.subset(reserved), topics)
    n_cells = len(set(train.users.tolist())) * topics.num_topics
    props = estimate_propensities_nb(train, sample, n_cells)
    out = _outdir(args.out)
    io.write_tsv(out / "train_topics.tsv", train)
    io.write_tsv(out / "test_topics.tsv", test)
    io.write_propensities(out / "propensities.tsv", props)
    print(f"train {len(train)}, test {len(test)}, propensity sample {len(sample)} -> {out}")
    return 0


def cmd_train(args) -> int:
    train = io.read_tsv(args.train)
    check_valid(train)
    props = io.read_propensities(args.propensities) if args.propensities else None
    if args.method == "mf-ips" and props is None:
        raise ConfigError("mf-ips needs --propensities")
    n_topics = args.num_topics or int(train.topics.max()) + 1
    config = TrainConfig(
        dim=args.dim, reg=args.reg, learning_rate=args.lr, epochs=args.epochs,
        batch_size=args.batch_size, loss=args.loss, seed=args.seed,
    )

    def fit(table, cfg):
        if args.method == "expomf":
            return train_expomf(table, cfg, num_topics=n_topics)
        return train_mf(table, cfg, props if args.method == "mf-ips" else None, num_topics=n_topics).model

    if args.cv:
        if props is None:
            raise ConfigError("--cv scores configs with SNIPS and needs --propensities")
        exp = ExperimentConfig.load(args.config)
        name = {"mf": "MF", "mf-ips": "MF-IPS", "expomf": "ExpoMF"}[args.method]
        grid = [g.with_(epochs=args.epochs, batch_size=args.batch_size, loss=args.loss)
                for g in build_grid(exp, args.seed, name)]
        config, scores = cross_validate(train, grid, props, fit, folds=args.folds, seed=args.seed)
        print(f"selected dim={config.dim} reg={config.reg:g} lr={config.learning_rate:g}")
    model = fit(train, config)
    io.save_model(args.out, model)
    print(f"saved {args.method} model -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = io.load_model(args.model)
    test = io.read_tsv(args.test)
    mae, mse = rating_metrics(test, model)
    ndcg = ndcg_at_k(test, model, args.k)
    line = f"mae\t{mae:.6f}\nmse\t{mse:.6f}\nndcg@{args.k}\t{ndcg:.6f}\n"
    if args.out:
        Path(args.out).write_text("metric\tvalue\n" + line)
    sys.stdout.write(line)
    return 0


def cmd_stats(args) -> int:
    ratings = io.read_tsv(args.ratings)
    topics: TopicAssignment = io.read_topics(args.topics)
    counts = topic_rating_counts(ratings, topics)
    rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    text = "topic\tcount\n" + "".join(f"{t}\t{c}\n" for t, c in rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_experiment(args, extra) -> int:
    overrides = parse_overrides(extra)
    if args.seed is not None:
        overrides.append(("master_seed", args.seed))
    if args.workers is not None:
        overrides.append(("workers", args.workers))
    config = ExperimentConfig.load(args.config, overrides)
    outdir = args.out or config.output_dir
    results = run_experiment(config, outdir)
    sys.stdout.write((Path(outdir) / "summary.txt").read_text())
    if results.errors:
        log.error("%d cells failed; see %s/errors.tsv", len(results.errors), outdir)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pe-bias", description=__doc__)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-gen", help="generate a fully-synthetic PE dataset")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--num-users", type=int, default=1000)
    s.add_argument("--num-topics", type=int, default=50)
    s.add_argument("--dim", type=int, default=3, help="rank of the generating preferences")
    s.add_argument("--sparsity", type=float, default=0.1)
    s.add_argument("--decay", type=float, default=0.5)
    s.add_argument("--test-rate", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("topics", help="synthesize item topics from a ratings TSV")
    s.add_argument("--ratings", required=True)
    s.add_argument("--clusters", type=int, required=True)
    s.add_argument("--embedding-dim", type=int, default=32)
    s.add_argument("--walks-per-node", type=int, default=10)
    s.add_argument("--walk-length", type=int, default=40)
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--negatives", type=int, default=5)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("simulate-pe", help="aggregate item ratings into topic-level PE data")
    s.add_argument("--ratings", required=True, help="biased item ratings TSV")
    s.add_argument("--test-ratings", required=True, help="MCAR item ratings TSV")
    s.add_argument("--topics", required=True)
    s.add_argument("--sample-fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train MF, MF-IPS or ExpoMF on a topic TSV")
    s.add_argument("--train", required=True)
    s.add_argument("--method", choices=["mf", "mf-ips", "expomf"], default="mf")
    s.add_argument("--propensities")
    s.add_argument("--num-topics", type=int)
    s.add_argument("--dim", type=int, default=10)
    s.add_argument("--reg", type=float, default=1e-3)
    s.add_argument("--lr", type=float, default=1e-2)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--batch-size", type=int, default=128)
    s.add_argument("--loss", choices=["squared", "absolute"], default="squared")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cv", action="store_true", help="select hyperparameters by SNIPS cross-validation")
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--config", help="experiment config supplying the CV grid")
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="MAE / MSE / NDCG@k of a model on a test TSV")
    s.add_argument("--model", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--out")

    s = sub.add_parser("stats", help="rating counts per topic (plot-ready TSV)")
    s.add_argument("--ratings", required=True)
    s.add_argument("--topics", required=True)
    s.add_argument("--out")

    s = sub.add_parser(
        "experiment", help="run a full sweep; extra --section.key=value flags override the config"
    )
    s.add_argument("--config")
    s.add_argument("--seed", type=int, help="master seed")
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    return p


HANDLERS = {
    "synth-gen": cmd_synth_gen,
    "topics": cmd_topics,
    "simulate-pe": cmd_simulate_pe,
    "train": cmd_train,
    "eval": cmd_eval,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "experiment":
            return cmd_experiment(args, extra)
        if extra:
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        return HANDLERS[args.command](args)
    except (PEBiasError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
