"""Synthesize item topics from interactions: graph walks -> skip-gram embeddings -> GMM clusters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import InteractionTable, TopicAssignment
from .gmm import GmmParams, assign_topics, fit_gmm
from .graph import ITEM_PREFIX, BipartiteGraph, build_graph, generate_walks
from .skipgram import EmbeddingTable, train_embeddings


@dataclass(frozen=True)
class EmbeddingSettings:
    dim: int = 32
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025


def embed_items(
    table: InteractionTable, settings: EmbeddingSettings = EmbeddingSettings(), seed: int = 0
) -> tuple[BipartiteGraph, EmbeddingTable]:
    graph = build_graph(table)
    walks = generate_walks(graph, settings.walks_per_node, settings.walk_length, seed=seed)
    emb = train_embeddings(
        walks,
        graph.num_nodes,
        dim=settings.dim,
        window=settings.window,
        negatives=settings.negatives,
        epochs=settings.epochs,
        learning_rate=settings.learning_rate,
        seed=seed + 1,
        node_ids=graph.node_names(),
    )
    return graph, emb


def item_vectors(graph: BipartiteGraph, emb: EmbeddingTable) -> np.ndarray:
    return emb.vectors[graph.num_users :]


def discover_topics(
    graph: BipartiteGraph, emb: EmbeddingTable, K: int, seed: int = 0, max_iters: int = 200
) -> tuple[TopicAssignment, GmmParams]:
    vectors = item_vectors(graph, emb)
    gmm = fit_gmm(vectors, K, max_iters=max_iters, seed=seed)
    return assign_topics(gmm, vectors, graph.item_ids), gmm


__all__ = [
    "BipartiteGraph",
    "EmbeddingSettings",
    "EmbeddingTable",
    "GmmParams",
    "ITEM_PREFIX",
    "assign_topics",
    "build_graph",
    "discover_topics",
    "embed_items",
    "fit_gmm",
    "generate_walks",
    "item_vectors",
    "train_embeddings",
]
