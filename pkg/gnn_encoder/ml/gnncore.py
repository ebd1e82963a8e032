"""Two-layer edge-featured GAT with passage-interactive query fusion and a gated
query-interactive passage fusion, with hand-derived gradients.

Shapes: every node and edge feature has length d; a layer has H heads of
width d_h = d / H whose outputs are concatenated. Head matrices are d x d_h
and applied as ``h @ W``; the fusion matrices W_pq and W_qp are d x 2d and
applied as ``W @ [x || y] + b``.
"""
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from gnn_encoder.ml.numkit import (
    affine,
    elu,
    elu_grad,
    leaky_relu,
    leaky_relu_grad,
    masked_softmax,
    sigmoid,
)
from gnn_encoder.models.errors import ConfigError, DimensionError, GraphError
from gnn_encoder.models.training import FusionMode
from gnn_encoder.services.graphbuild import QueryPassageGraph

Activation = Literal["elu", "identity"]


@dataclass
class GatHeadParams:
    """One attention head: W_t, W_s, W_e (d x d_h) and a (3 d_h, or 2 d_h without edges)."""

    w_t: np.ndarray
    w_s: np.ndarray
    w_e: Optional[np.ndarray]
    a: np.ndarray

    @property
    def head_dim(self) -> int:
        return self.w_t.shape[1]

    @property
    def use_edge_features(self) -> bool:
        return self.w_e is not None

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"w_t": self.w_t, "w_s": self.w_s, "a": self.a}
        if self.w_e is not None:
            out["w_e"] = self.w_e
        return out

    def zeros_like(self) -> "GatHeadParams":
        return GatHeadParams(
            w_t=np.zeros_like(self.w_t),
            w_s=np.zeros_like(self.w_s),
            w_e=None if self.w_e is None else np.zeros_like(self.w_e),
            a=np.zeros_like(self.a),
        )

    def copy(self) -> "GatHeadParams":
        return GatHeadParams(
            w_t=self.w_t.copy(),
            w_s=self.w_s.copy(),
            w_e=None if self.w_e is None else self.w_e.copy(),
            a=self.a.copy(),
        )


@dataclass
class GnnParams:
    """All trainable GAT, fusion and gate weights."""

    layer1: list[GatHeadParams]
    layer2: list[GatHeadParams]
    w_pq: np.ndarray
    b_pq: np.ndarray
    w_qp: np.ndarray
    b_qp: np.ndarray
    slope: float = 0.2
    activation: Activation = "elu"

    def __post_init__(self):
        if not self.layer1 or len(self.layer1) != len(self.layer2):
            raise ConfigError("both GAT layers need the same, nonzero number of heads")
        if not 0.0 < self.slope < 1.0:
            raise ConfigError(f"leaky slope must lie in (0, 1), got {self.slope}")
        d = self.dim
        if d % self.heads != 0:
            raise ConfigError(f"heads ({self.heads}) must divide dim ({d})")
        for name, mat in (("w_pq", self.w_pq), ("w_qp", self.w_qp)):
            if mat.shape != (d, 2 * d):
                raise DimensionError(name, (d, 2 * d), mat.shape)

    @property
    def heads(self) -> int:
        return len(self.layer1)

    @property
    def dim(self) -> int:
        return self.w_pq.shape[0]

    @property
    def use_edge_features(self) -> bool:
        return self.layer1[0].use_edge_features

    @classmethod
    def init(
        cls,
        dim: int,
        heads: int,
        rng: np.random.Generator,
        slope: float = 0.2,
        use_edge_features: bool = True,
        activation: Activation = "elu",
    ) -> "GnnParams":
        """Residual-friendly start.

        Each head's W_s is the identity slice for its output columns and W_pq
        passes h_q through, so the untrained model adds a gated attention
        average of neighbouring query embeddings to each passage.
        """
        if heads < 1 or dim % heads != 0:
            raise ConfigError(f"heads ({heads}) must divide dim ({dim})")
        d_h = dim // heads
        eye = np.eye(dim)

        def head(h: int) -> GatHeadParams:
            cols = slice(h * d_h, (h + 1) * d_h)
            return GatHeadParams(
                w_t=rng.normal(0.0, 0.1, size=(dim, d_h)),
                w_s=eye[:, cols] + rng.normal(0.0, 0.01, size=(dim, d_h)),
                w_e=rng.normal(0.0, 0.1, size=(dim, d_h)) if use_edge_features else None,
                a=rng.normal(0.0, 0.1, size=(3 if use_edge_features else 2) * d_h),
            )

        layer1 = [head(h) for h in range(heads)]
        layer2 = [head(h) for h in range(heads)]
        return cls(
            layer1=layer1,
            layer2=layer2,
            w_pq=np.hstack([rng.normal(0.0, 0.01, size=(dim, dim)), eye]),
            b_pq=np.zeros(dim),
            w_qp=rng.normal(0.0, 0.01, size=(dim, 2 * dim)),
            b_qp=np.zeros(dim),
            slope=slope,
            activation=activation,
        )

    def tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer_name, layer in (("layer1", self.layer1), ("layer2", self.layer2)):
            for h, head in enumerate(layer):
                for name, value in head.tensors().items():
                    out[f"{layer_name}.{h}.{name}"] = value
        out.update({"w_pq": self.w_pq, "b_pq": self.b_pq, "w_qp": self.w_qp, "b_qp": self.b_qp})
        return out

    @classmethod
    def from_tensors(
        cls,
        tensors: Mapping[str, np.ndarray],
        heads: int,
        slope: float = 0.2,
        activation: Activation = "elu",
    ) -> "GnnParams":
        def head(layer: str, h: int) -> GatHeadParams:
            prefix = f"{layer}.{h}."
            w_e = tensors.get(prefix + "w_e")
            return GatHeadParams(
                w_t=np.array(tensors[prefix + "w_t"], dtype=np.float64),
                w_s=np.array(tensors[prefix + "w_s"], dtype=np.float64),
                w_e=None if w_e is None else np.array(w_e, dtype=np.float64),
                a=np.array(tensors[prefix + "a"], dtype=np.float64),
            )

        return cls(
            layer1=[head("layer1", h) for h in range(heads)],
            layer2=[head("layer2", h) for h in range(heads)],
            w_pq=np.array(tensors["w_pq"], dtype=np.float64),
            b_pq=np.array(tensors["b_pq"], dtype=np.float64),
            w_qp=np.array(tensors["w_qp"], dtype=np.float64),
            b_qp=np.array(tensors["b_qp"], dtype=np.float64),
            slope=slope,
            activation=activation,
        )

    def zeros_like(self) -> "GnnParams":
        return GnnParams(
            layer1=[h.zeros_like() for h in self.layer1],
            layer2=[h.zeros_like() for h in self.layer2],
            w_pq=np.zeros_like(self.w_pq),
            b_pq=np.zeros_like(self.b_pq),
            w_qp=np.zeros_like(self.w_qp),
            b_qp=np.zeros_like(self.b_qp),
            slope=self.slope,
            activation=self.activation,
        )

    def copy(self) -> "GnnParams":
        return GnnParams(
            layer1=[h.copy() for h in self.layer1],
            layer2=[h.copy() for h in self.layer2],
            w_pq=self.w_pq.copy(),
            b_pq=self.b_pq.copy(),
            w_qp=self.w_qp.copy(),
            b_qp=self.b_qp.copy(),
            slope=self.slope,
            activation=self.activation,
        )

    def sgd_step(self, grads: "GnnParams", lr: float) -> None:
        if lr == 0.0:
            return
        mine = self.tensors()
        for name, g in grads.tensors().items():
            mine[name] -= lr * g


# ---------------------------------------------------------------------------
# single head


@dataclass
class HeadCache:
    center: np.ndarray
    neighbors: np.ndarray
    edges: Optional[np.ndarray]
    t: np.ndarray
    S: np.ndarray
    F: Optional[np.ndarray]
    e: np.ndarray
    alpha: np.ndarray
    agg: np.ndarray


def _activate(x: np.ndarray, activation: Activation) -> np.ndarray:
    return elu(x) if activation == "elu" else x


def _activate_grad(x: np.ndarray, activation: Activation) -> np.ndarray:
    return elu_grad(x) if activation == "elu" else np.ones_like(x)


def _stack(rows: Sequence[np.ndarray], name: str) -> np.ndarray:
    if len(rows) == 0:
        raise GraphError("empty neighborhood")
    arr = np.asarray(np.vstack(rows), dtype=np.float64)
    return arr


def _head_forward(
    center: np.ndarray,
    neighbors: np.ndarray,
    edges: Optional[np.ndarray],
    head: GatHeadParams,
    slope: float,
    activation: Activation,
) -> tuple[np.ndarray, HeadCache]:
    d_h = head.head_dim
    t = center @ head.w_t
    S = neighbors @ head.w_s
    e = S @ head.a[d_h:2 * d_h] + t @ head.a[:d_h]
    F = None
    if head.w_e is not None:
        if edges is None:
            raise GraphError("edge features required by this head are missing")
        F = edges @ head.w_e
        e = e + F @ head.a[2 * d_h:]
    alpha = masked_softmax(leaky_relu(e, slope))
    agg = alpha @ S
    out = _activate(agg, activation)
    return out, HeadCache(center, neighbors, edges if F is not None else None, t, S, F, e, alpha, agg)


def _head_backward(
    g_out: np.ndarray,
    cache: HeadCache,
    head: GatHeadParams,
    grads: GatHeadParams,
    slope: float,
    activation: Activation,
) -> tuple[np.ndarray, np.ndarray]:
    d_h = head.head_dim
    g_agg = g_out * _activate_grad(cache.agg, activation)
    g_alpha = cache.S @ g_agg
    g_S = np.outer(cache.alpha, g_agg)
    g_z = cache.alpha * (g_alpha - cache.alpha @ g_alpha)
    g_e = g_z * leaky_relu_grad(cache.e, slope)

    a_t, a_s = head.a[:d_h], head.a[d_h:2 * d_h]
    grads.a[:d_h] += g_e.sum() * cache.t
    grads.a[d_h:2 * d_h] += g_e @ cache.S
    g_t = g_e.sum() * a_t
    g_S += np.outer(g_e, a_s)
    if cache.F is not None:
        grads.a[2 * d_h:] += g_e @ cache.F
        g_F = np.outer(g_e, head.a[2 * d_h:])
        grads.w_e += cache.edges.T @ g_F

    grads.w_t += np.outer(cache.center, g_t)
    grads.w_s += cache.neighbors.T @ g_S
    return head.w_t @ g_t, g_S @ head.w_s.T


def _layer_forward(center, neighbors, edges, heads, slope, activation):
    outs, caches = [], []
    for head in heads:
        out, cache = _head_forward(center, neighbors, edges, head, slope, activation)
        outs.append(out)
        caches.append(cache)
    return np.concatenate(outs), caches


def _layer_backward(g_out, caches, heads, head_grads, slope, activation):
    g_center = np.zeros_like(caches[0].center)
    g_neighbors = np.zeros_like(caches[0].neighbors)
    for h, (cache, head, grads) in enumerate(zip(caches, heads, head_grads)):
        d_h = head.head_dim
        g_c, g_n = _head_backward(g_out[h * d_h:(h + 1) * d_h], cache, head, grads, slope, activation)
        g_center += g_c
        g_neighbors += g_n
    return g_center, g_neighbors


def _check_aligned(neighbors: Sequence, edge_feats: Optional[Sequence]) -> None:
    if edge_feats is not None and len(edge_feats) != len(neighbors):
        raise DimensionError("edge features (one per neighbor)", (len(neighbors),), (len(edge_feats),))


def attention_weights(
    center: np.ndarray,
    neighbors: Sequence[np.ndarray],
    edge_feats: Optional[Sequence[np.ndarray]],
    head: GatHeadParams,
    slope: float,
) -> np.ndarray:
    """Normalised importance of each neighbour (self-loop included) to ``center``."""
    _check_aligned(neighbors, edge_feats)
    nb = _stack(neighbors, "neighbors")
    edges = _stack(edge_feats, "edge features") if head.use_edge_features else None
    _, cache = _head_forward(np.asarray(center, dtype=np.float64), nb, edges, head, slope, "identity")
    return cache.alpha


def gat_aggregate(
    weights: np.ndarray,
    neighbors: Sequence[np.ndarray],
    head: GatHeadParams,
    activation: Activation = "elu",
) -> np.ndarray:
    """Weighted sum of ``W_s``-transformed neighbours, then the activation."""
    weights = np.asarray(weights, dtype=np.float64)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"attention weights must sum to 1, got {weights.sum()}")
    nb = _stack(neighbors, "neighbors")
    if weights.shape != (nb.shape[0],):
        raise DimensionError("attention weights", (nb.shape[0],), weights.shape)
    return _activate(weights @ (nb @ head.w_s), activation)


# ---------------------------------------------------------------------------
# fusion


@dataclass
class QueryFusionCache:
    h_q: np.ndarray
    heads: list[HeadCache]
    concat: np.ndarray


@dataclass
class PassageFusionCache:
    mode: FusionMode
    h_p: np.ndarray
    heads: Optional[list[HeadCache]] = None
    h_tilde: Optional[np.ndarray] = None
    concat: Optional[np.ndarray] = None
    gate: Optional[np.ndarray] = None


def fuse_query_forward(
    h_q: np.ndarray,
    neighbors: np.ndarray,
    edges: Optional[np.ndarray],
    params: GnnParams,
) -> tuple[np.ndarray, QueryFusionCache]:
    h_tilde, heads = _layer_forward(h_q, neighbors, edges, params.layer1, params.slope, params.activation)
    concat = np.concatenate([h_tilde, h_q])
    return affine(params.w_pq, concat, params.b_pq), QueryFusionCache(h_q, heads, concat)


def fuse_query_backward(
    g: np.ndarray, cache: QueryFusionCache, params: GnnParams, grads: GnnParams
) -> tuple[np.ndarray, np.ndarray]:
    """Returns gradients for the centre h_q and for each layer-1 neighbour row."""
    d = params.dim
    grads.w_pq += np.outer(g, cache.concat)
    grads.b_pq += g
    g_concat = params.w_pq.T @ g
    g_center, g_neighbors = _layer_backward(
        g_concat[:d], cache.heads, params.layer1, grads.layer1, params.slope, params.activation
    )
    return g_center + g_concat[d:], g_neighbors


def fuse_passage_forward(
    h_p: np.ndarray,
    neighbors: Optional[np.ndarray],
    edges: Optional[np.ndarray],
    params: Optional[GnnParams],
    mode: FusionMode,
) -> tuple[np.ndarray, PassageFusionCache]:
    if mode.combiner == "identity":
        return h_p, PassageFusionCache(mode=mode, h_p=h_p)
    h_tilde, heads = _layer_forward(h_p, neighbors, edges, params.layer2, params.slope, params.activation)
    if mode.combiner == "constant_alpha":
        return mode.alpha * h_tilde + h_p, PassageFusionCache(mode, h_p, heads, h_tilde)
    concat = np.concatenate([h_tilde, h_p])
    gate = sigmoid(affine(params.w_qp, concat, params.b_qp))
    return gate * h_tilde + h_p, PassageFusionCache(mode, h_p, heads, h_tilde, concat, gate)


def fuse_passage_backward(
    g: np.ndarray, cache: PassageFusionCache, params: Optional[GnnParams], grads: Optional[GnnParams]
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Returns gradients for the centre h_p and for each layer-2 neighbour row."""
    if cache.mode.combiner == "identity":
        return g, None
    d = params.dim
    g_hp = g.copy()
    if cache.mode.combiner == "constant_alpha":
        g_tilde = cache.mode.alpha * g
    else:
        f = cache.gate
        g_tilde = g * f
        g_u = g * cache.h_tilde * f * (1.0 - f)
        grads.w_qp += np.outer(g_u, cache.concat)
        grads.b_qp += g_u
        g_concat = params.w_qp.T @ g_u
        g_tilde = g_tilde + g_concat[:d]
        g_hp += g_concat[d:]
    g_center, g_neighbors = _layer_backward(
        g_tilde, cache.heads, params.layer2, grads.layer2, params.slope, params.activation
    )
    return g_hp + g_center, g_neighbors


def _check_mode(params: Optional[GnnParams], mode: FusionMode) -> None:
    if mode.combiner == "identity":
        return
    if params is None:
        raise ConfigError(f"fusion mode {mode.combiner} needs GNN parameters")
    if params.use_edge_features != mode.use_edge_features:
        raise ConfigError("GNN parameters and fusion mode disagree on edge features")


def fuse_query(
    h_q: np.ndarray,
    neighbor_passage_feats: Sequence[np.ndarray],
    edge_feats: Optional[Sequence[np.ndarray]],
    params: GnnParams,
) -> np.ndarray:
    """Passage-interactive query embedding h'_q.

    ``neighbor_passage_feats`` ends with the self-loop entry ``h_q`` and
    ``edge_feats`` lines up with it.
    """
    _check_aligned(neighbor_passage_feats, edge_feats)
    nb = _stack(neighbor_passage_feats, "neighbors")
    edges = _stack(edge_feats, "edge features") if params.use_edge_features else None
    out, _ = fuse_query_forward(np.asarray(h_q, dtype=np.float64), nb, edges, params)
    return out


def fuse_passage(
    h_p: np.ndarray,
    neighbor_query_fused: Sequence[np.ndarray],
    edge_feats: Optional[Sequence[np.ndarray]],
    params: Optional[GnnParams],
    mode: FusionMode,
) -> np.ndarray:
    """Query-interactive passage embedding h'_p.

    ``neighbor_query_fused`` holds h'_q (raw h_q in one-layer mode) for every
    query that retrieved the passage, followed by the self-loop entry ``h_p``.
    """
    _check_mode(params, mode)
    h_p = np.asarray(h_p, dtype=np.float64)
    if mode.combiner == "identity":
        return h_p
    _check_aligned(neighbor_query_fused, edge_feats)
    nb = _stack(neighbor_query_fused, "neighbors")
    edges = _stack(edge_feats, "edge features") if mode.use_edge_features else None
    out, _ = fuse_passage_forward(h_p, nb, edges, params, mode)
    return out


# ---------------------------------------------------------------------------
# batched forward / backward over a graph


@dataclass
class NodeFeatures:
    """Where node features come from in one forward pass.

    ``query`` and ``passage`` are recomputed by the dual encoder and carry
    gradient; ``cached_passage`` feeds the layer-1 passage neighbours and is
    gradient-stopped.
    """

    query: Callable[[int], np.ndarray]
    passage: Callable[[int], np.ndarray]
    cached_passage: Callable[[int], np.ndarray]


@dataclass
class GraphForward:
    """Forward values of one batch, kept for :func:`gnn_backward`."""

    mode: FusionMode
    outputs: dict[int, np.ndarray] = field(default_factory=dict)
    passage_caches: dict[int, PassageFusionCache] = field(default_factory=dict)
    query_caches: dict[int, QueryFusionCache] = field(default_factory=dict)
    passage_neighbors: dict[int, tuple[int, ...]] = field(default_factory=dict)
    fused_queries: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class GnnBackward:
    params: Optional[GnnParams]
    query: dict[int, np.ndarray]
    passage: dict[int, np.ndarray]


def _fused_query(q: int, graph: QueryPassageGraph, features: NodeFeatures, params: GnnParams, fwd: GraphForward):
    if q not in fwd.fused_queries:
        h_q = features.query(q)
        ps = graph.passage_neighbors.get(q, ())
        rows = [features.cached_passage(p) for p in ps] + [h_q]
        edges = None
        if params.use_edge_features:
            edges = np.vstack([graph.pair_features[(q, p)] for p in ps] + [graph.query_loops[q]])
        out, cache = fuse_query_forward(h_q, np.vstack(rows), edges, params)
        fwd.fused_queries[q] = out
        fwd.query_caches[q] = cache
    return fwd.fused_queries[q]


def forward_passages(
    passages: Iterable[int],
    graph: Optional[QueryPassageGraph],
    features: NodeFeatures,
    params: Optional[GnnParams],
    mode: FusionMode,
) -> GraphForward:
    """Compute h'_p for each passage; h'_q of each neighbour query is computed once."""
    _check_mode(params, mode)
    fwd = GraphForward(mode=mode)
    for p in passages:
        if p in fwd.outputs:
            continue
        h_p = features.passage(p)
        if mode.combiner == "identity":
            fwd.outputs[p], fwd.passage_caches[p] = fuse_passage_forward(h_p, None, None, None, mode)
            fwd.passage_neighbors[p] = ()
            continue
        if graph is None:
            raise GraphError(f"fusion mode {mode.combiner} needs a graph")
        qs = graph.query_neighbors.get(p, ())
        if mode.one_layer:
            rows = [features.query(q) for q in qs]
        else:
            rows = [_fused_query(q, graph, features, params, fwd) for q in qs]
        edges = None
        if mode.use_edge_features:
            edges = np.vstack([graph.pair_features[(q, p)] for q in qs] + [graph.passage_loops[p]])
        fwd.outputs[p], fwd.passage_caches[p] = fuse_passage_forward(
            h_p, np.vstack(rows + [h_p]), edges, params, mode
        )
        fwd.passage_neighbors[p] = qs
    return fwd


def _add(target: dict[int, np.ndarray], key: int, g: np.ndarray) -> None:
    target[key] = target[key] + g if key in target else np.array(g, dtype=np.float64)


def gnn_backward(
    forward: GraphForward, params: Optional[GnnParams], upstream: Mapping[int, np.ndarray]
) -> GnnBackward:
    """Reverse pass of :func:`forward_passages`.

    ``upstream`` maps passage id to d(loss)/d(h'_p). Returns parameter
    gradients and gradients for every gradient-carrying input embedding;
    layer-1 rows that came from cached passage features get none.
    """
    grads = params.zeros_like() if params is not None else None
    query_grads: dict[int, np.ndarray] = {}
    passage_grads: dict[int, np.ndarray] = {}
    fused_grads: dict[int, np.ndarray] = {}

    for p in sorted(upstream):
        cache = forward.passage_caches.get(p)
        if cache is None:
            raise GraphError(f"no forward cache for passage {p}")
        g_hp, g_rows = fuse_passage_backward(np.asarray(upstream[p], dtype=np.float64), cache, params, grads)
        if g_rows is not None:
            g_hp = g_hp + g_rows[-1]
            target = query_grads if forward.mode.one_layer else fused_grads
            for q, row in zip(forward.passage_neighbors[p], g_rows[:-1]):
                _add(target, q, row)
        _add(passage_grads, p, g_hp)

    for q in sorted(fused_grads):
        cache = forward.query_caches.get(q)
        if cache is None:
            raise GraphError(f"no forward cache for query {q}")
        g_center, g_rows = fuse_query_backward(fused_grads[q], cache, params, grads)
        # rows before the self-loop are cached passage features: gradient stops
        _add(query_grads, q, g_center + g_rows[-1])

    return GnnBackward(params=grads, query=query_grads, passage=passage_grads)


# ---------------------------------------------------------------------------
# attention diagnostics


def layer2_attention(
    passage: int,
    graph: QueryPassageGraph,
    features: NodeFeatures,
    params: GnnParams,
    mode: FusionMode,
) -> tuple[tuple[int, ...], np.ndarray]:
    """Head-averaged layer-2 attention of ``passage`` over Q_i followed by itself."""
    if mode.combiner == "identity":
        raise ConfigError("identity fusion has no attention to inspect")
    fwd = forward_passages([passage], graph, features, params, mode)
    heads = fwd.passage_caches[passage].heads
    weights = np.mean([h.alpha for h in heads], axis=0)
    return fwd.passage_neighbors[passage], weights


def positive_attention_share(queries: Sequence[int], weights: np.ndarray, positives: set[int]) -> float:
    """Share of query-neighbour attention that lands on labeled-positive queries."""
    query_weights = np.asarray(weights[: len(queries)])
    total = query_weights.sum()
    if total <= 0.0:
        return 0.0
    hit = sum(w for q, w in zip(queries, query_weights) if q in positives)
    return float(hit / total)


def attention_dump(
    queries: Sequence[int], weights: np.ndarray, positives: set[int], query_ids: Sequence[str]
) -> pd.DataFrame:
    """Rows ``query_id, attention_weight, is_labeled_positive`` by weight descending.

    The self-loop weight is part of the softmax but not listed.
    """
    rows = [
        {
            "query_id": query_ids[q],
            "attention_weight": float(w),
            "is_labeled_positive": int(q in positives),
        }
        for q, w in zip(queries, weights[: len(queries)])
    ]
    frame = pd.DataFrame(rows, columns=["query_id", "attention_weight", "is_labeled_positive"])
    return frame.sort_values("attention_weight", ascending=False, kind="mergesort").reset_index(drop=True)
