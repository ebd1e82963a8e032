"""Tests for GAT attention, fusion and the graph-level forward pass."""
import math

import numpy as np
import pytest

from gnn_encoder.ml.encoders import encode
from gnn_encoder.ml.gnncore import (
    GnnParams,
    NodeFeatures,
    attention_dump,
    attention_weights,
    forward_passages,
    fuse_passage,
    fuse_query,
    gat_aggregate,
    gnn_backward,
    layer2_attention,
    positive_attention_share,
)
from gnn_encoder.ml.gradcheck import tiny_instance
from gnn_encoder.ml.numkit import elu
from gnn_encoder.models.errors import ConfigError, DimensionError, GraphError
from gnn_encoder.models.training import FusionMode

DIM = 8


@pytest.fixture
def inst():
    return tiny_instance(seed=7)


def features_for(inst):
    return NodeFeatures(
        query=lambda q: encode(inst.tokens.queries[q], inst.dual.query),
        passage=lambda p: encode(inst.tokens.passages[p], inst.dual.passage),
        cached_passage=inst.cache.get,
    )


class TestAttention:
    """Edge-featured attention weights and aggregation."""

    def test_weights_normalized(self):
        """Weights sum to 1 within 1e-9 over many random neighbourhoods and heads."""
        rng = np.random.default_rng(0)
        for trial in range(100):
            params = GnnParams.init(DIM, 2, rng)
            head = params.layer1[trial % 2] if trial % 3 else params.layer2[trial % 2]
            size = int(rng.integers(1, 12))
            neighbors = list(rng.normal(0, 3, size=(size, DIM)))
            edges = list(rng.normal(0, 3, size=(size, DIM)))
            w = attention_weights(rng.normal(0, 3, size=DIM), neighbors, edges, head, params.slope)
            assert abs(w.sum() - 1.0) <= 1e-9
            assert np.all(w >= 0)

    def test_weights_without_edge_features(self, rng):
        """Heads without W_e ignore edge features."""
        params = GnnParams.init(DIM, 2, rng, use_edge_features=False)
        head = params.layer1[0]
        assert head.a.shape == (2 * head.head_dim,)
        w = attention_weights(rng.normal(size=DIM), list(rng.normal(size=(3, DIM))), None, head, 0.2)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_misaligned_edges(self, rng, gnn):
        """One edge feature per neighbour."""
        with pytest.raises(DimensionError):
            attention_weights(
                rng.normal(size=DIM), list(rng.normal(size=(3, DIM))), list(rng.normal(size=(2, DIM))),
                gnn.layer1[0], 0.2,
            )

    def test_empty_neighborhood(self, rng, gnn):
        """At least the self-loop is required."""
        with pytest.raises(GraphError):
            attention_weights(rng.normal(size=DIM), [], [], gnn.layer1[0], 0.2)

    def test_aggregate_value(self, rng, gnn):
        """ELU of the weighted sum of W_s-transformed neighbours."""
        head = gnn.layer1[1]
        neighbors = list(rng.normal(size=(4, DIM)))
        weights = np.array([0.1, 0.2, 0.3, 0.4])
        expected = elu(sum(w * (n @ head.w_s) for w, n in zip(weights, neighbors)))
        np.testing.assert_allclose(gat_aggregate(weights, neighbors, head), expected, atol=1e-12)

    def test_matches_naive_oracle(self):
        """One head, d = 4, three neighbours: straight-line recomputation within 1e-12."""
        rng = np.random.default_rng(21)
        params = GnnParams.init(4, 1, rng)
        head = params.layer1[0]
        center = rng.normal(size=4)
        neighbors = list(rng.normal(size=(3, 4)))
        edges = list(rng.normal(size=(3, 4)))

        t = [sum(center[i] * head.w_t[i, k] for i in range(4)) for k in range(4)]
        raw = []
        for n, f in zip(neighbors, edges):
            s = [sum(n[i] * head.w_s[i, k] for i in range(4)) for k in range(4)]
            g = [sum(f[i] * head.w_e[i, k] for i in range(4)) for k in range(4)]
            e = sum(head.a[k] * t[k] + head.a[4 + k] * s[k] + head.a[8 + k] * g[k] for k in range(4))
            raw.append(e if e > 0 else params.slope * e)
        expected = [math.exp(e) / sum(math.exp(x) for x in raw) for e in raw]

        w = attention_weights(center, neighbors, edges, head, params.slope)
        np.testing.assert_allclose(w, expected, atol=1e-12, rtol=0)

    def test_permutation_equivariance(self, rng, gnn):
        """Permuting neighbours permutes the weights and leaves the aggregate unchanged."""
        for head in gnn.layer1 + gnn.layer2:
            center = rng.normal(size=DIM)
            neighbors = list(rng.normal(size=(6, DIM)))
            edges = list(rng.normal(size=(6, DIM)))
            w = attention_weights(center, neighbors, edges, head, gnn.slope)
            order = rng.permutation(6)
            shuffled = attention_weights(
                center, [neighbors[i] for i in order], [edges[i] for i in order], head, gnn.slope
            )
            np.testing.assert_allclose(shuffled, w[order], atol=1e-12, rtol=0)
            np.testing.assert_allclose(
                gat_aggregate(shuffled, [neighbors[i] for i in order], head),
                gat_aggregate(w, neighbors, head),
                atol=1e-12,
                rtol=0,
            )

    def test_no_edge_features_ignores_edges(self, rng):
        """Without edge features any edge input gives bitwise the same fusion."""
        params = GnnParams.init(DIM, 2, rng, use_edge_features=False)
        mode = FusionMode.gate(use_edge_features=False)
        h_p = rng.normal(size=DIM)
        rows = list(rng.normal(size=(3, DIM))) + [h_p]
        base = fuse_passage(h_p, rows, list(rng.normal(size=(4, DIM))), params, mode)
        for _ in range(5):
            edges = list(rng.normal(0, 10, size=(4, DIM)))
            np.testing.assert_array_equal(fuse_passage(h_p, rows, edges, params, mode), base)
        np.testing.assert_array_equal(fuse_passage(h_p, rows, None, params, mode), base)
        h_q = rng.normal(size=DIM)
        q_rows = list(rng.normal(size=(3, DIM))) + [h_q]
        np.testing.assert_array_equal(
            fuse_query(h_q, q_rows, list(rng.normal(size=(4, DIM))), params),
            fuse_query(h_q, q_rows, None, params),
        )

    def test_aggregate_rejects_unnormalized(self, rng, gnn):
        """Weights must form a distribution."""
        with pytest.raises(ValueError):
            gat_aggregate(np.array([0.5, 0.6]), list(rng.normal(size=(2, DIM))), gnn.layer1[0])


class TestFusion:
    """Query and passage fusion."""

    def test_identity_returns_input(self, rng):
        """Identity fusion hands back h_p unchanged, with or without a GNN."""
        h_p = rng.normal(size=DIM)
        np.testing.assert_array_equal(fuse_passage(h_p, [], None, None, FusionMode.identity()), h_p)

    def test_constant_alpha_zero(self, rng, gnn):
        """alpha = 0 leaves h_p untouched."""
        h_p = rng.normal(size=DIM)
        rows = list(rng.normal(size=(3, DIM))) + [h_p]
        edges = list(rng.normal(size=(4, DIM)))
        out = fuse_passage(h_p, rows, edges, gnn, FusionMode.constant_alpha(0.0))
        np.testing.assert_array_equal(out, h_p)

    def test_gate_between_zero_and_one(self, rng, gnn):
        """The gate scales the aggregate elementwise by a factor in (0, 1)."""
        h_p = rng.normal(size=DIM)
        rows = list(rng.normal(size=(3, DIM))) + [h_p]
        edges = list(rng.normal(size=(4, DIM)))
        h_tilde = fuse_passage(h_p, rows, edges, gnn, FusionMode.constant_alpha(1.0)) - h_p
        gated = fuse_passage(h_p, rows, edges, gnn, FusionMode.gate()) - h_p
        mask = np.abs(h_tilde) > 1e-8
        ratio = gated[mask] / h_tilde[mask]
        assert np.all(ratio > 0) and np.all(ratio < 1)

    def test_query_fusion_shape(self, rng, gnn):
        """h'_q has length d; the neighbour list ends with h_q itself."""
        h_q = rng.normal(size=DIM)
        rows = list(rng.normal(size=(3, DIM))) + [h_q]
        out = fuse_query(h_q, rows, list(rng.normal(size=(4, DIM))), gnn)
        assert out.shape == (DIM,)
        assert np.all(np.isfinite(out))

    def test_mode_mismatch(self, rng, gnn):
        """Missing parameters or disagreeing edge-feature flags are configuration errors."""
        h_p = rng.normal(size=DIM)
        with pytest.raises(ConfigError):
            fuse_passage(h_p, [h_p], [h_p], None, FusionMode.gate())
        with pytest.raises(ConfigError):
            fuse_passage(h_p, [h_p], None, gnn, FusionMode.gate(use_edge_features=False))


class TestParams:
    """Parameter containers."""

    def test_heads_must_divide_dim(self, rng):
        """H must divide d."""
        with pytest.raises(ConfigError):
            GnnParams.init(DIM, 3, rng)

    def test_tensor_names(self, gnn):
        """Named per layer and head, plus the fusion matrices."""
        names = set(gnn.tensors())
        assert "layer1.0.w_t" in names and "layer2.1.w_e" in names
        assert {"w_pq", "b_pq", "w_qp", "b_qp"} <= names
        assert gnn.w_pq.shape == (DIM, 2 * DIM)

    def test_from_tensors(self, gnn):
        """Rebuilding from named tensors reproduces every array."""
        clone = GnnParams.from_tensors(gnn.tensors(), heads=2)
        for name, value in gnn.tensors().items():
            np.testing.assert_array_equal(clone.tensors()[name], value)

    def test_zero_learning_rate(self, gnn):
        """lr = 0 leaves every parameter bit-identical."""
        before = gnn.copy().tensors()
        grads = gnn.copy()
        gnn.sgd_step(grads, 0.0)
        for name, value in gnn.tensors().items():
            np.testing.assert_array_equal(value, before[name])

    def test_sgd_step_in_place(self, gnn):
        """A step moves each tensor against its gradient."""
        before = gnn.copy()
        gnn.sgd_step(before, 0.5)
        np.testing.assert_allclose(gnn.w_qp, 0.5 * before.w_qp)
        np.testing.assert_allclose(gnn.layer2[1].a, 0.5 * before.layer2[1].a)


class TestGraphForward:
    """Forward and backward passes over a graph."""

    def test_identity_needs_no_graph(self, inst):
        """Identity outputs the recomputed passage embeddings."""
        fwd = forward_passages([0, 3], None, features_for(inst), None, FusionMode.identity())
        np.testing.assert_array_equal(fwd.outputs[3], encode(inst.tokens.passages[3], inst.dual.passage))

    def test_graph_required(self, inst):
        """Non-identity fusion without a graph is an error."""
        with pytest.raises(GraphError):
            forward_passages([0], None, features_for(inst), inst.gnn, FusionMode.gate())

    def test_isolated_passage(self, inst):
        """A passage no query retrieved attends only to itself."""
        isolated = next(p for p, qs in inst.graph.query_neighbors.items() if not qs)
        queries, weights = layer2_attention(isolated, inst.graph, features_for(inst), inst.gnn, FusionMode.gate())
        assert queries == ()
        np.testing.assert_array_equal(weights, [1.0])

    def test_fused_queries_computed_once(self, inst):
        """Each neighbour query is fused once per forward pass."""
        fwd = forward_passages(range(20), inst.graph, features_for(inst), inst.gnn, FusionMode.gate())
        neighbours = {q for qs in inst.graph.query_neighbors.values() for q in qs}
        assert set(fwd.fused_queries) == neighbours
        assert set(fwd.outputs) == set(range(20))

    def test_one_layer_skips_query_fusion(self, inst):
        """One-layer mode feeds raw query embeddings to layer 2."""
        mode = FusionMode.gate(one_layer=True)
        fwd = forward_passages(range(20), inst.graph, features_for(inst), inst.gnn, mode)
        assert fwd.fused_queries == {}

    def test_backward_requires_forward(self, inst):
        """Gradients for a passage without a forward cache are rejected."""
        fwd = forward_passages([0], inst.graph, features_for(inst), inst.gnn, FusionMode.gate())
        with pytest.raises(GraphError):
            gnn_backward(fwd, inst.gnn, {5: np.ones(DIM)})

    def test_layer2_attention(self, inst):
        """Head-averaged weights over Q_i then the self-loop."""
        passage = next(p for p, qs in inst.graph.query_neighbors.items() if qs)
        queries, weights = layer2_attention(passage, inst.graph, features_for(inst), inst.gnn, FusionMode.gate())
        assert queries == inst.graph.query_neighbors[passage]
        assert len(weights) == len(queries) + 1
        assert weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_identity_has_no_attention(self, inst):
        """Identity mode has nothing to inspect."""
        with pytest.raises(ConfigError):
            layer2_attention(0, inst.graph, features_for(inst), inst.gnn, FusionMode.identity())


class TestAttentionDump:
    """Attention diagnostics."""

    def test_sorted_rows(self):
        """Rows by weight descending, self-loop excluded, ties keep input order."""
        frame = attention_dump([2, 0, 1], np.array([0.2, 0.5, 0.2, 0.1]), {1}, ["qa", "qb", "qc"])
        assert list(frame["query_id"]) == ["qa", "qc", "qb"]
        assert list(frame["is_labeled_positive"]) == [0, 0, 1]
        assert list(frame.columns) == ["query_id", "attention_weight", "is_labeled_positive"]

    def test_positive_share(self):
        """Share of query attention on labeled positives."""
        share = positive_attention_share([4, 5], np.array([0.3, 0.1, 0.6]), {4})
        assert share == pytest.approx(0.75)
        assert positive_attention_share([], np.array([1.0]), set()) == 0.0
