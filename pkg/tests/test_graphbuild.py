"""Tests for query-passage graph construction and the masked split."""
import numpy as np
import pytest

from gnn_encoder.ml.encoders import CrossEncoderParams, DualEncoder, TokenizedCorpus, encode
from gnn_encoder.models.errors import GraphError
from gnn_encoder.models.training import TrainConfig
from gnn_encoder.services.graphbuild import (
    GraphBuilder,
    brute_force_topk,
    build_graph,
    drop_positive_edges,
    epoch_seed,
    export_adjacency,
    masked_count,
    split_masked,
)

VOCAB = 32


def random_instance(n: int, m: int, seed: int):
    """Random token sequences plus fresh models over them."""
    rng = np.random.default_rng(seed)
    tokens = TokenizedCorpus(
        queries=[rng.integers(1, VOCAB, size=rng.integers(1, 4)) for _ in range(n)],
        passages=[rng.integers(1, VOCAB, size=rng.integers(2, 6)) for _ in range(m)],
        vocab_size=VOCAB,
    )
    dual = DualEncoder.init(TrainConfig(dim=4, vocab_size=VOCAB, heads=2), rng)
    cross = CrossEncoderParams.init(VOCAB, 4, rng)
    return tokens, dual, cross


class TestBruteForceTopK:
    """Exact maximum inner product search."""

    def test_ranked_by_score(self, rng):
        """Scores descend and match a full sort."""
        embs = rng.normal(size=(40, 5))
        q = rng.normal(size=5)
        ranked = brute_force_topk(q, embs, 10)
        expected = np.argsort(-(embs @ q), kind="stable")[:10]
        assert [p for p, _ in ranked] == list(expected)

    def test_ties_broken_by_id(self):
        """Equal scores come out in ascending passage id."""
        embs = np.ones((5, 3))
        assert [p for p, _ in brute_force_topk(np.ones(3), embs, 5)] == [0, 1, 2, 3, 4]
        ids = [9, 4, 7, 1, 3]
        assert [p for p, _ in brute_force_topk(np.ones(3), embs, 3, ids=ids)] == [1, 3, 4]

    def test_k_larger_than_collection(self, rng):
        """At most m results."""
        assert len(brute_force_topk(rng.normal(size=3), rng.normal(size=(4, 3)), 10)) == 4

    def test_empty_collection(self):
        """No passages raises GraphError."""
        with pytest.raises(GraphError):
            brute_force_topk(np.ones(3), np.zeros((0, 3)), 1)


class TestGraphShape:
    """Edge counts and adjacency consistency."""

    def test_edge_count_formula(self):
        """n*k + m + n edges whenever m >= k."""
        rng = np.random.default_rng(0)
        for trial in range(50):
            n, m = int(rng.integers(1, 15)), int(rng.integers(1, 25))
            k = int(rng.integers(1, m + 1))
            tokens, dual, cross = random_instance(n, m, trial)
            graph = build_graph(range(n), tokens, dual, cross, k)
            assert graph.edge_count == n * k + m + n
            assert graph.num_nodes == n + m

    @pytest.mark.parametrize("n", [1, 2, 7, 20, 50])
    @pytest.mark.parametrize("m", [1, 3, 12, 50])
    def test_adjacency_transpose(self, n, m):
        """Query lists and passage lists describe the same edge set."""
        tokens, dual, cross = random_instance(n, m, n * 100 + m)
        graph = build_graph(range(n), tokens, dual, cross, 3)
        assert set(graph.query_neighbors) == set(range(m))
        forward = {(q, p) for q, ps in graph.passage_neighbors.items() for p in ps}
        backward = {(q, p) for p, qs in graph.query_neighbors.items() for q in qs}
        assert forward == backward
        assert forward == set(graph.pair_features)
        for qs in graph.query_neighbors.values():
            assert list(qs) == sorted(qs)

    def test_neighbors_follow_retrieval(self):
        """P_i is the query's top-k under the dual encoder, in rank order."""
        tokens, dual, cross = random_instance(5, 20, 1)
        graph = build_graph(range(5), tokens, dual, cross, 4)
        embs = np.vstack([encode(t, dual.passage) for t in tokens.passages])
        for q in range(5):
            expected = [p for p, _ in brute_force_topk(encode(tokens.queries[q], dual.query), embs, 4)]
            assert list(graph.passage_neighbors[q]) == expected

    def test_edge_features(self):
        """Undirected pair features, self-loops and missing edges."""
        tokens, dual, cross = random_instance(3, 10, 2)
        graph = build_graph(range(3), tokens, dual, cross, 2)
        p = graph.passage_neighbors[0][0]
        assert graph.edge_feature(("q", 0), ("p", p)) is graph.edge_feature(("p", p), ("q", 0))
        assert graph.edge_feature(("p", p), ("p", p)).shape == (4,)
        assert graph.edge_feature(("q", 1), ("q", 1)).shape == (4,)
        absent = next(x for x in range(10) if x not in graph.passage_neighbors[0])
        with pytest.raises(GraphError):
            graph.edge_feature(("q", 0), ("p", absent))
        with pytest.raises(GraphError):
            graph.edge_feature(("q", 0), ("q", 1))

    def test_features_read_only(self):
        """Edge features cannot be modified after construction."""
        tokens, dual, cross = random_instance(2, 5, 3)
        graph = build_graph(range(2), tokens, dual, cross, 2)
        feature = next(iter(graph.pair_features.values()))
        with pytest.raises(ValueError):
            feature[0] = 1.0

    def test_builder_reuses_features(self):
        """Graphs over different query subsets share edge features."""
        tokens, dual, cross = random_instance(6, 12, 4)
        builder = GraphBuilder(tokens, dual, cross, 3)
        a = builder.build([0, 1, 2])
        b = builder.build([2, 3])
        key = (2, a.passage_neighbors[2][0])
        assert a.pair_features[key] is b.pair_features[key]
        assert set(b.passage_neighbors) == {2, 3}

    def test_invalid_k(self):
        """k must be positive."""
        tokens, dual, cross = random_instance(2, 5, 5)
        with pytest.raises(ValueError):
            GraphBuilder(tokens, dual, cross, 0)

    def test_drop_positive_edges(self):
        """Exactly the labeled edges present in the graph are removed."""
        tokens, dual, cross = random_instance(6, 10, 6)
        graph = build_graph(range(6), tokens, dual, cross, 3)
        present = [(q, ps[0]) for q, ps in graph.passage_neighbors.items()]
        absent = [(0, next(p for p in range(10) if p not in graph.passage_neighbors[0]))]
        pruned = drop_positive_edges(graph, present + absent)
        before = set(graph.pair_features)
        after = set(pruned.pair_features)
        assert before - after == set(present)
        assert after == before - set(present)
        assert pruned.edge_count == graph.edge_count - len(present)
        for q, p in present:
            assert q not in pruned.query_neighbors[p]

    def test_export_adjacency(self, small_corpus, tokens, dual, cross):
        """One row per query-passage edge with the retrieval score."""
        graph = build_graph(small_corpus.train_queries[:3], tokens, dual, cross, 3)
        frame = export_adjacency(graph, small_corpus)
        assert list(frame.columns) == ["q_id", "p_id", "score"]
        assert len(frame) == graph.num_pair_edges == 9
        assert frame["score"].notna().all()


class TestMaskedSplit:
    """Per-epoch partition of training queries."""

    @pytest.mark.parametrize(
        "n,beta,expected",
        [(10, 0.05, 1), (100, 0.05, 5), (2, 0.9, 1), (5, 0.5, 3), (40, 0.5, 20), (3, 0.01, 1)],
    )
    def test_masked_count(self, n, beta, expected):
        """round(beta * n), half up, clamped to [1, n - 1]."""
        assert masked_count(n, beta) == expected

    def test_partition(self):
        """Disjoint, covering, right size."""
        queries = list(range(3, 43))
        for epoch in range(10):
            split = split_masked(queries, 0.25, epoch_seed(13, epoch))
            assert not set(split.graph_queries) & set(split.train_queries)
            assert set(split.graph_queries) | set(split.train_queries) == set(queries)
            assert len(split.train_queries) == 10

    def test_deterministic(self):
        """Same seed, same split; other epochs differ."""
        queries = list(range(50))
        a = split_masked(queries, 0.2, epoch_seed(1, 0))
        b = split_masked(queries, 0.2, epoch_seed(1, 0))
        c = split_masked(queries, 0.2, epoch_seed(1, 1))
        assert a == b
        assert a.train_queries != c.train_queries

    def test_invalid(self):
        """Too few queries or beta outside (0, 1)."""
        with pytest.raises(ValueError):
            split_masked([1], 0.5, 0)
        with pytest.raises(ValueError):
            split_masked([1, 2, 3], 1.0, 0)
