"""Query-passage graph construction and the Masked Graph Training split."""
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Literal, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from gnn_encoder.ml.encoders import (
    CrossEncoderParams,
    DualEncoder,
    TokenizedCorpus,
    cross_encode,
    encode,
    encode_all,
)
from gnn_encoder.models.corpus import Corpus
from gnn_encoder.models.errors import GraphError
from gnn_encoder.models.training import EpochSplit
from gnn_encoder.utils.logger import get_logger

logger = get_logger(__name__)

Node = tuple[Literal["q", "p"], int]


def brute_force_topk(
    query_emb: np.ndarray,
    passage_embs: np.ndarray,
    k: int,
    ids: Optional[Sequence[int]] = None,
) -> list[tuple[int, float]]:
    """Exact top-k by dot product, ties broken by ascending passage id.

    Args:
        query_emb: (d,) query vector
        passage_embs: (m, d) passage vectors
        k: number of results; ``min(k, m)`` are returned
        ids: passage id of each row (defaults to the row position)

    Returns:
        List of ``(passage id, score)`` sorted by score descending
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    passage_embs = np.asarray(passage_embs, dtype=np.float64)
    if passage_embs.ndim != 2 or passage_embs.shape[0] == 0:
        raise GraphError("passage collection is empty")
    ids_arr = np.arange(passage_embs.shape[0]) if ids is None else np.asarray(ids, dtype=np.int64)
    scores = passage_embs @ np.asarray(query_emb, dtype=np.float64)
    order = np.lexsort((ids_arr, -scores))[:k]
    return [(int(ids_arr[i]), float(scores[i])) for i in order]


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class QueryPassageGraph:
    """Bipartite query-passage graph with self-loops on every node.

    Query and passage ids are corpus row positions. ``passage_neighbors`` is
    P_i (ranked retrieval order) for every graph query; ``query_neighbors`` is
    Q_i (ascending query id) for every passage, possibly empty.
    """

    num_passages: int
    passage_neighbors: Mapping[int, tuple[int, ...]]
    query_neighbors: Mapping[int, tuple[int, ...]]
    pair_features: Mapping[tuple[int, int], np.ndarray]
    query_loops: Mapping[int, np.ndarray]
    passage_loops: Mapping[int, np.ndarray]
    pair_scores: Mapping[tuple[int, int], float] = field(default_factory=dict)

    @property
    def query_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.passage_neighbors))

    @property
    def num_queries(self) -> int:
        return len(self.passage_neighbors)

    @property
    def num_nodes(self) -> int:
        return self.num_queries + self.num_passages

    @property
    def num_pair_edges(self) -> int:
        return sum(len(ps) for ps in self.passage_neighbors.values())

    @property
    def edge_count(self) -> int:
        return self.num_pair_edges + self.num_passages + self.num_queries

    def has_edge(self, query: int, passage: int) -> bool:
        return (query, passage) in self.pair_features

    def edge_feature(self, x: Node, y: Node) -> np.ndarray:
        """Feature of edge ``e(x, y)``; query-passage edges are undirected."""
        if x == y:
            kind, idx = x
            return self.query_loops[idx] if kind == "q" else self.passage_loops[idx]
        if x[0] == "p" and y[0] == "q":
            x, y = y, x
        if x[0] != "q" or y[0] != "p":
            raise GraphError(f"no edges between {x} and {y}")
        try:
            return self.pair_features[(x[1], y[1])]
        except KeyError:
            raise GraphError(f"edge {x}-{y} is not in the graph") from None


def _assemble(
    num_passages: int,
    passage_neighbors: dict[int, tuple[int, ...]],
    pair_features: dict[tuple[int, int], np.ndarray],
    query_loops: dict[int, np.ndarray],
    passage_loops: dict[int, np.ndarray],
    pair_scores: dict[tuple[int, int], float],
) -> QueryPassageGraph:
    transpose: dict[int, list[int]] = {p: [] for p in range(num_passages)}
    for q in sorted(passage_neighbors):
        for p in passage_neighbors[q]:
            transpose[p].append(q)
    return QueryPassageGraph(
        num_passages=num_passages,
        passage_neighbors=MappingProxyType(dict(passage_neighbors)),
        query_neighbors=MappingProxyType({p: tuple(qs) for p, qs in transpose.items()}),
        pair_features=MappingProxyType(dict(pair_features)),
        query_loops=MappingProxyType(dict(query_loops)),
        passage_loops=MappingProxyType(dict(passage_loops)),
        pair_scores=MappingProxyType(dict(pair_scores)),
    )


class GraphBuilder:
    """
    Builds query-passage graphs from one retriever and one cross-encoder.

    Retrieval results and edge features are computed once and reused by every
    graph built afterwards, so per-epoch graphs over different query subsets
    share the same edge set.
    """

    def __init__(
        self,
        tokens: TokenizedCorpus,
        dual: DualEncoder,
        cross: CrossEncoderParams,
        k: int,
        passage_embeddings: Optional[np.ndarray] = None,
    ):
        """
        Initialize the builder.

        Args:
            tokens: Tokenized corpus
            dual: Dual encoder whose query tower defines the retrieval
            cross: Frozen cross-encoder producing edge features
            k: Edges per query node
            passage_embeddings: Precomputed E_P matrix (m x d); encoded from
                ``dual.passage`` when omitted
        """
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
        if not tokens.passages:
            raise GraphError("cannot build a graph over an empty passage set")
        self.tokens = tokens
        self.dual = dual
        self.cross = cross
        self.k = k
        if passage_embeddings is None:
            passage_embeddings = encode_all(tokens.passages, dual.passage)
        self.passage_embeddings = passage_embeddings
        self._retrieved: dict[int, list[tuple[int, float]]] = {}
        self._pair_features: dict[tuple[int, int], np.ndarray] = {}
        self._query_loops: dict[int, np.ndarray] = {}
        self._passage_loops: dict[int, np.ndarray] = {}

    @property
    def num_passages(self) -> int:
        return len(self.tokens.passages)

    def retrieve(self, query: int) -> list[tuple[int, float]]:
        if query not in self._retrieved:
            emb = encode(self.tokens.queries[query], self.dual.query)
            self._retrieved[query] = brute_force_topk(emb, self.passage_embeddings, self.k)
        return self._retrieved[query]

    def pair_feature(self, query: int, passage: int) -> np.ndarray:
        key = (query, passage)
        if key not in self._pair_features:
            self._pair_features[key] = _freeze(
                cross_encode(self.tokens.queries[query], self.tokens.passages[passage], self.cross)
            )
        return self._pair_features[key]

    def query_loop(self, query: int) -> np.ndarray:
        if query not in self._query_loops:
            toks = self.tokens.queries[query]
            self._query_loops[query] = _freeze(cross_encode(toks, toks, self.cross))
        return self._query_loops[query]

    def passage_loop(self, passage: int) -> np.ndarray:
        if passage not in self._passage_loops:
            toks = self.tokens.passages[passage]
            self._passage_loops[passage] = _freeze(cross_encode(toks, toks, self.cross))
        return self._passage_loops[passage]

    def build(self, graph_queries: Iterable[int]) -> QueryPassageGraph:
        """Assemble a new graph over ``graph_queries`` and every passage."""
        passage_neighbors: dict[int, tuple[int, ...]] = {}
        pair_features: dict[tuple[int, int], np.ndarray] = {}
        pair_scores: dict[tuple[int, int], float] = {}
        query_loops: dict[int, np.ndarray] = {}
        for q in sorted(set(graph_queries)):
            ranked = self.retrieve(q)
            passage_neighbors[q] = tuple(p for p, _ in ranked)
            for p, score in ranked:
                pair_features[(q, p)] = self.pair_feature(q, p)
                pair_scores[(q, p)] = score
            query_loops[q] = self.query_loop(q)
        passage_loops = {p: self.passage_loop(p) for p in range(self.num_passages)}

        graph = _assemble(
            self.num_passages, passage_neighbors, pair_features, query_loops, passage_loops, pair_scores
        )
        logger.debug(f"Built graph: {graph.num_nodes} nodes, {graph.edge_count} edges")
        return graph


def build_graph(
    graph_queries: Iterable[int],
    tokens: TokenizedCorpus,
    dual: DualEncoder,
    cross: CrossEncoderParams,
    k: int,
) -> QueryPassageGraph:
    """Retrieve top-k passages per query, add self-loops and edge features."""
    return GraphBuilder(tokens, dual, cross, k).build(graph_queries)


def epoch_seed(base_seed: int, epoch: int) -> int:
    """Independent, reproducible seed for one epoch."""
    return int(np.random.SeedSequence([base_seed, epoch]).generate_state(1)[0])


def masked_count(n: int, beta: float) -> int:
    """``round(beta * n)`` (half up), clamped to ``[1, n - 1]``."""
    return min(max(int(np.floor(beta * n + 0.5)), 1), n - 1)


def split_masked(query_ids: Iterable[int], beta: float, seed: int) -> EpochSplit:
    """Partition training queries into graph queries Q_g and trained queries Q_t."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    ids = sorted(set(query_ids))
    if len(ids) < 2:
        raise ValueError(f"masked split needs at least 2 queries, got {len(ids)}")
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(ids)
    n_train = masked_count(len(ids), beta)
    return EpochSplit(
        graph_queries=tuple(sorted(int(q) for q in shuffled[n_train:])),
        train_queries=tuple(sorted(int(q) for q in shuffled[:n_train])),
        beta=beta,
        seed=seed,
    )


def drop_positive_edges(graph: QueryPassageGraph, qrels: Iterable[tuple[int, int]]) -> QueryPassageGraph:
    """Remove every labeled (query, positive) edge present in the graph."""
    labeled = set(qrels)
    dropped = 0
    passage_neighbors: dict[int, tuple[int, ...]] = {}
    for q, ps in graph.passage_neighbors.items():
        kept = tuple(p for p in ps if (q, p) not in labeled)
        dropped += len(ps) - len(kept)
        passage_neighbors[q] = kept
    pair_features = {key: f for key, f in graph.pair_features.items() if key not in labeled}
    pair_scores = {key: s for key, s in graph.pair_scores.items() if key not in labeled}
    logger.debug(f"Dropped {dropped} labeled query-passage edges")
    return _assemble(
        graph.num_passages,
        passage_neighbors,
        pair_features,
        dict(graph.query_loops),
        dict(graph.passage_loops),
        pair_scores,
    )


def export_adjacency(graph: QueryPassageGraph, corpus: Corpus) -> pd.DataFrame:
    """Query-passage edges as ``q_id, p_id, score`` rows, by query then rank."""
    rows = []
    for q in graph.query_ids:
        for p in graph.passage_neighbors[q]:
            rows.append(
                {
                    "q_id": corpus.query_ids[q],
                    "p_id": corpus.passage_ids[p],
                    "score": graph.pair_scores.get((q, p), float("nan")),
                }
            )
    return pd.DataFrame(rows, columns=["q_id", "p_id", "score"])
