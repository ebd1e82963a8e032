"""Finite-difference checks of the full training loss on a fixed tiny instance."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from gnn_encoder.cache.embedding_cache import EmbeddingCache
from gnn_encoder.ml.encoders import CrossEncoderParams, DualEncoder, TokenizedCorpus
from gnn_encoder.ml.gnncore import GnnParams
from gnn_encoder.ml.numkit import grouped_reports, unflatten_tensors
from gnn_encoder.ml.trainer import batch_loss, random_negative_triples
from gnn_encoder.models.corpus import Corpus, SyntheticConfig
from gnn_encoder.models.training import FusionMode, GradReport, TrainConfig, TrainingTriple
from gnn_encoder.services.corpus_io import gen_synthetic
from gnn_encoder.services.graphbuild import GraphBuilder, QueryPassageGraph, split_masked
from gnn_encoder.utils.logger import get_logger

logger = get_logger(__name__)

# Relative-error floor for the two full-loss checks below only. Their losses chain
# hashed pooling, tanh, attention and a softmax, so central differences carry
# ~1e-11 absolute error and coordinates with |g| < 1e-7 need the wider floor.
# Kernel-level checks keep numkit.RELATIVE_FLOOR (1e-8).
COMPOSITE_FLOOR = 1e-6


@dataclass
class TinyInstance:
    corpus: Corpus
    tokens: TokenizedCorpus
    config: TrainConfig
    dual: DualEncoder
    cross: CrossEncoderParams
    gnn: GnnParams
    cache: EmbeddingCache
    graph: QueryPassageGraph
    batch: list[TrainingTriple]


def tiny_instance(seed: int = 7, mode: Optional[FusionMode] = None) -> TinyInstance:
    """d=8, H=2, 6 queries, 20 passages, k=3, V_h=64; half the queries build the graph."""
    mode = mode or FusionMode.gate()
    config = TrainConfig(
        dim=8,
        vocab_size=64,
        heads=2,
        k=3,
        beta=0.5,
        seed=seed,
        fusion=mode.combiner,
        alpha=mode.alpha,
        edge_features=mode.use_edge_features,
        one_layer=mode.one_layer,
    )
    corpus = gen_synthetic(
        SyntheticConfig(m=20, n_train=6, n_test=0, vocab_size=50, topics=4, passage_len=(5, 8)), seed
    )
    tokens = TokenizedCorpus.from_corpus(corpus, config.vocab_size)
    rng = np.random.default_rng(seed)
    dual = DualEncoder.init(config, rng)
    cross = CrossEncoderParams.init(config.vocab_size, config.dim, rng, frozen=True)
    gnn = GnnParams.init(
        config.dim, config.heads, rng, slope=config.leaky_slope, use_edge_features=config.edge_features
    )
    cache = EmbeddingCache.build(tokens, dual.passage)
    split = split_masked(corpus.train_queries, config.beta, seed)
    graph = GraphBuilder(tokens, dual, cross, config.k, passage_embeddings=cache.matrix).build(
        split.graph_queries
    )
    trained = set(split.train_queries)
    batch = [t for t in random_negative_triples(corpus, seed) if t.query in trained]
    return TinyInstance(corpus, tokens, config, dual, cross, gnn, cache, graph, batch)


def _parameters(dual: DualEncoder, gnn: GnnParams) -> dict[str, np.ndarray]:
    tensors = {f"dual.{k}": v for k, v in dual.tensors().items()}
    tensors.update({f"gnn.{k}": v for k, v in gnn.tensors().items()})
    return tensors


def check_joint_gradients(
    inst: TinyInstance, step: float = 1e-5, tol: float = 1e-4, floor: float = COMPOSITE_FLOOR
) -> dict[str, GradReport]:
    """Per-tensor reports for the joint batch loss over dual-encoder and GNN parameters."""
    mode = inst.config.fusion_mode
    result = batch_loss(inst.batch, inst.dual, inst.tokens, inst.gnn, inst.graph, inst.cache, mode)
    tensors = _parameters(inst.dual, inst.gnn)
    grads = _parameters(result.dual, result.gnn)

    def loss_fn(theta: np.ndarray) -> float:
        named = unflatten_tensors(theta, tensors)
        dual = DualEncoder.from_tensors({k[5:]: v for k, v in named.items() if k.startswith("dual.")})
        gnn = GnnParams.from_tensors(
            {k[4:]: v for k, v in named.items() if k.startswith("gnn.")},
            heads=inst.config.heads,
            slope=inst.config.leaky_slope,
            activation=inst.config.activation,
        )
        return batch_loss(inst.batch, dual, inst.tokens, gnn, inst.graph, inst.cache, mode).loss

    return grouped_reports(loss_fn, tensors, grads, step, tol, floor, depth=3)


def check_dual_gradients(
    inst: TinyInstance, step: float = 1e-5, tol: float = 1e-4, floor: float = COMPOSITE_FLOOR
) -> dict[str, GradReport]:
    """Per-tensor reports for the plain dual-encoder contrastive loss."""
    result = batch_loss(inst.batch, inst.dual, inst.tokens)
    tensors = inst.dual.tensors()

    def loss_fn(theta: np.ndarray) -> float:
        dual = DualEncoder.from_tensors(unflatten_tensors(theta, tensors))
        return batch_loss(inst.batch, dual, inst.tokens).loss

    return grouped_reports(loss_fn, tensors, result.dual.tensors(), step, tol, floor, depth=2)


def run_gradient_suite(seed: int = 7, tol: float = 1e-4) -> dict[str, GradReport]:
    """Dual-only and joint checks on the tiny instance, keyed ``dual/…`` and ``joint/…``."""
    inst = tiny_instance(seed)
    reports = {f"dual/{k}": r for k, r in check_dual_gradients(inst, tol=tol).items()}
    reports.update({f"joint/{k}": r for k, r in check_joint_gradients(inst, tol=tol).items()})
    failed = [name for name, r in reports.items() if not r.passed]
    logger.info(
        f"Gradient suite: {len(reports)} groups, "
        f"{sum(r.checked for r in reports.values())} coordinates, {len(failed)} failed"
    )
    for name in failed:
        r = reports[name]
        logger.warning(f"{name}: max relative error {r.max_rel_error:.3e} at coordinate {r.worst_index}")
    return reports

