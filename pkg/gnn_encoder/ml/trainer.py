"""Stage-0 cross-encoder fitting, stage-1 dual-encoder training, hard-negative
mining and the joint dual-encoder + GNN loop with Masked Graph Training."""
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from gnn_encoder.cache.embedding_cache import EmbeddingCache
from gnn_encoder.ml.encoders import (
    CrossEncoderParams,
    DualEncoder,
    EncodingTape,
    TokenizedCorpus,
    contrastive_loss,
    contrastive_loss_grad,
    encode,
    encode_all,
    encode_backward,
    encode_forward,
    pair_score,
    pair_tokens,
)
from gnn_encoder.ml.gnncore import GnnParams, NodeFeatures, forward_passages, gnn_backward
from gnn_encoder.ml.numkit import sigmoid, tensor_fingerprint
from gnn_encoder.models.corpus import Corpus
from gnn_encoder.models.errors import ConfigError, DataError, GraphError, NumericError
from gnn_encoder.models.training import (
    FusionMode,
    MiningResult,
    TrainConfig,
    TrainingHistory,
    TrainingTriple,
)
from gnn_encoder.services.graphbuild import (
    GraphBuilder,
    QueryPassageGraph,
    brute_force_topk,
    drop_positive_edges,
    epoch_seed,
    split_masked,
)
from gnn_encoder.utils.logger import get_logger

logger = get_logger(__name__)

EpochCallback = Callable[[int, DualEncoder, GnnParams], None]


@dataclass
class BatchLoss:
    """Summed batch loss and gradients for every trainable parameter."""

    loss: float
    dual: DualEncoder
    gnn: Optional[GnnParams]
    passages: tuple[int, ...]


@dataclass
class JointResult:
    dual: DualEncoder
    gnn: GnnParams
    history: TrainingHistory


def batch_loss(
    batch: Sequence[TrainingTriple],
    dual: DualEncoder,
    tokens: TokenizedCorpus,
    gnn: Optional[GnnParams] = None,
    graph: Optional[QueryPassageGraph] = None,
    cache: Optional[EmbeddingCache] = None,
    mode: Optional[FusionMode] = None,
) -> BatchLoss:
    """
    Contrastive loss of one batch scored by ``E_Q(q) . h'_p``.

    The passage pool P_b holds every positive and hard negative of the batch,
    deduplicated by passage id; each query's negatives are the rest of the
    pool. Query and passage node features are recomputed through the dual
    encoder; layer-1 passage neighbours come from ``cache`` and carry no
    gradient.

    Args:
        batch: Training triples Q_b
        dual: Dual encoder being trained
        tokens: Tokenized corpus
        gnn: GNN parameters (unused in identity mode)
        graph: Query-passage graph built from Q_g
        cache: Cached M_de passage embeddings; fresh gradient-free
            encodings are used when omitted
        mode: Fusion mode, identity when omitted

    Returns:
        BatchLoss with the summed loss and gradients
    """
    if not batch:
        raise ValueError("batch must contain at least one triple")
    mode = mode or FusionMode.identity()
    tape = EncodingTape(dual, tokens)
    if cache is not None:
        cached = cache.get
    else:
        def cached(p: int) -> np.ndarray:
            return encode(tokens.passages[p], dual.passage)

    pool = tuple(sorted({t.positive for t in batch} | {t.negative for t in batch}))
    features = NodeFeatures(query=tape.query, passage=tape.passage, cached_passage=cached)
    fwd = forward_passages(pool, graph, features, gnn, mode)

    fused = np.vstack([fwd.outputs[p] for p in pool])
    position = {p: i for i, p in enumerate(pool)}
    g_fused = np.zeros_like(fused)
    loss = 0.0
    for triple in batch:
        h_q = tape.query(triple.query)
        scores = fused @ h_q
        pos = position[triple.positive]
        negatives = np.delete(scores, pos)
        loss += contrastive_loss(scores[pos], negatives)
        g_pos, g_negs = contrastive_loss_grad(scores[pos], negatives)
        g_scores = np.insert(g_negs, pos, g_pos)
        tape.add_query_grad(triple.query, g_scores @ fused)
        g_fused += np.outer(g_scores, h_q)

    back = gnn_backward(fwd, gnn, {p: g_fused[i] for i, p in enumerate(pool)})
    for q, g in back.query.items():
        tape.add_query_grad(q, g)
    for p, g in back.passage.items():
        tape.add_passage_grad(p, g)
    return BatchLoss(loss=loss, dual=tape.backward(), gnn=back.params, passages=pool)


def _batches(triples: Sequence[TrainingTriple], batch_size: int, seed: int) -> Iterator[list[TrainingTriple]]:
    order = np.random.default_rng(seed).permutation(len(triples))
    for start in range(0, len(order), batch_size):
        yield [triples[i] for i in order[start:start + batch_size]]


def _check_finite(loss: float, epoch: int, step: int) -> None:
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at epoch {epoch} step {step}")


def dual_encoder_step(
    batch: Sequence[TrainingTriple], dual: DualEncoder, lr: float, tokens: TokenizedCorpus
) -> float:
    """One in-place SGD step on the plain dual-encoder loss; returns the loss."""
    result = batch_loss(batch, dual, tokens)
    if np.isfinite(result.loss):
        dual.sgd_step(result.dual, lr)
    return result.loss


def train_dual_encoder(
    triples: Sequence[TrainingTriple],
    config: TrainConfig,
    tokens: TokenizedCorpus,
    dual: Optional[DualEncoder] = None,
    lr: Optional[float] = None,
    epochs: Optional[int] = None,
) -> tuple[DualEncoder, TrainingHistory]:
    """
    Mini-batch SGD with in-batch negatives on the dual-encoder alone (M_de).

    Args:
        triples: Training triples
        config: Training configuration
        tokens: Tokenized corpus
        dual: Starting point (copied); freshly initialized from the seed when omitted
        lr: Learning rate (defaults to ``config.lr_stage1``)
        epochs: Number of passes (defaults to ``config.stage1_epochs``)

    Returns:
        Trained dual encoder and its loss history
    """
    if not triples:
        raise DataError("no training triples")
    lr = config.lr_stage1 if lr is None else lr
    epochs = config.stage1_epochs if epochs is None else epochs
    if dual is None:
        dual = DualEncoder.init(config, np.random.default_rng(config.seed))
    else:
        dual = dual.copy()

    history = TrainingHistory()
    step = 0
    for epoch in range(epochs):
        epoch_losses = []
        for batch in _batches(triples, config.batch_size, epoch_seed(config.seed, epoch)):
            loss = dual_encoder_step(batch, dual, lr, tokens)
            _check_finite(loss, epoch, step)
            history.record(epoch, step, loss)
            history.batches.append(tuple(t.query for t in batch))
            epoch_losses.append(loss)
            logger.debug(f"stage-1 epoch {epoch} step {step} loss {loss:.6f}")
            step += 1
        logger.info(f"Dual encoder epoch {epoch + 1}/{epochs}: mean loss {np.mean(epoch_losses):.4f}")
    return dual, history


def random_negative_triples(corpus: Corpus, seed: int) -> list[TrainingTriple]:
    """Bootstrap triples pairing each labeled positive with a uniformly drawn non-positive."""
    rng = np.random.default_rng(seed)
    triples = []
    for q in corpus.train_queries:
        positives = set(corpus.positives(q))
        if not positives or len(positives) >= corpus.num_passages:
            continue
        for p in sorted(positives):
            negative = int(rng.integers(corpus.num_passages))
            while negative in positives:
                negative = int(rng.integers(corpus.num_passages))
            triples.append(TrainingTriple(query=q, positive=p, negative=negative))
    return triples


def train_cross_encoder(corpus: Corpus, tokens: TokenizedCorpus, config: TrainConfig) -> CrossEncoderParams:
    """
    Fit the cross-encoder surrogate with a pointwise logistic loss on ``pair_score``.

    Each labeled pair is a positive example; ``cross_negatives`` uniformly
    drawn non-positive passages per query are negative examples. One SGD
    step per query.

    Returns:
        Parameters with ``frozen`` set
    """
    rng = np.random.default_rng(config.seed)
    params = CrossEncoderParams.init(
        tokens.vocab_size, config.dim, rng, config.table_scale, frozen=False
    )
    queries = [q for q in corpus.train_queries if corpus.positives(q)]
    if not queries:
        raise DataError("no labeled training queries to fit the cross-encoder")

    for epoch in range(config.cross_epochs):
        total = 0.0
        for q in rng.permutation(queries):
            q = int(q)
            positives = set(corpus.positives(q))
            examples = [(p, 1.0) for p in sorted(positives)]
            if len(positives) < corpus.num_passages:
                for _ in range(config.cross_negatives):
                    p = int(rng.integers(corpus.num_passages))
                    while p in positives:
                        p = int(rng.integers(corpus.num_passages))
                    examples.append((p, 0.0))
            grads = params.zeros_like()
            for p, label in examples:
                pair = pair_tokens(tokens.queries[q], tokens.passages[p], params.vocab_size)
                cache = encode_forward(pair, params)
                score = float(cache.out.sum())
                # softplus(-s) for positives, softplus(s) for negatives
                total += float(np.logaddexp(0.0, score if label == 0.0 else -score))
                g_score = sigmoid(score) - label
                encode_backward(cache, np.full(params.dim, g_score), params, grads)
            params.sgd_step(grads, config.lr_cross)
        if not np.isfinite(total):
            raise NumericError(f"cross-encoder loss diverged in epoch {epoch}")
        logger.info(f"Cross-encoder epoch {epoch + 1}/{config.cross_epochs}: loss {total:.4f}")

    params.frozen = True
    return params


def denoise_and_mine(
    query_ids: Iterable[int],
    dual: DualEncoder,
    cross: CrossEncoderParams,
    corpus: Corpus,
    tokens: TokenizedCorpus,
    k_mine: int,
    tau: float,
    passage_embeddings: Optional[np.ndarray] = None,
) -> MiningResult:
    """
    Pick one hard negative per labeled query from the retriever's top ``k_mine``.

    The negative is the highest-ranked candidate that is not a labeled
    positive and whose cross-encoder pair score lies below the ``tau``-th
    percentile of the query's candidate scores. Without such a candidate the
    lowest-scored non-positive candidate is used; when every candidate is a
    labeled positive the first non-positive of the full ranking is used.
    Queries without a labeled positive are skipped.
    """
    if not cross.frozen:
        raise ConfigError("mining requires a frozen cross-encoder")
    if k_mine < 2:
        raise ConfigError(f"k_mine must be at least 2, got {k_mine}")
    if passage_embeddings is None:
        passage_embeddings = encode_all(tokens.passages, dual.passage)

    triples: list[TrainingTriple] = []
    skipped = fallbacks = 0
    for q in query_ids:
        positives = set(corpus.positives(q))
        if not positives:
            skipped += 1
            continue
        h_q = encode(tokens.queries[q], dual.query)
        candidates = [p for p, _ in brute_force_topk(h_q, passage_embeddings, k_mine)]
        scores = np.array([pair_score(tokens.queries[q], tokens.passages[p], cross) for p in candidates])
        threshold = np.percentile(scores, tau)

        negative = next(
            (p for p, s in zip(candidates, scores) if p not in positives and s < threshold),
            None,
        )
        if negative is None:
            fallbacks += 1
            others = [(s, p) for p, s in zip(candidates, scores) if p not in positives]
            if others:
                negative = min(others)[1]
            else:
                full = brute_force_topk(h_q, passage_embeddings, len(passage_embeddings))
                negative = next((p for p, _ in full if p not in positives), None)
        if negative is None:
            skipped += 1
            continue
        triples.extend(TrainingTriple(query=q, positive=p, negative=negative) for p in sorted(positives))

    if skipped:
        logger.warning(f"Skipped {skipped} queries without a usable positive/negative pair")
    logger.info(f"Mined {len(triples)} triples ({fallbacks} fallback negatives)")
    return MiningResult(triples=triples, skipped=skipped, fallbacks=fallbacks)


def joint_train(
    corpus: Corpus,
    tokens: TokenizedCorpus,
    dual: DualEncoder,
    cross: CrossEncoderParams,
    triples: Sequence[TrainingTriple],
    config: TrainConfig,
    cache: Optional[EmbeddingCache] = None,
    gnn: Optional[GnnParams] = None,
    on_epoch_end: Optional[EpochCallback] = None,
    model: Optional[DualEncoder] = None,
    start_epoch: int = 0,
) -> JointResult:
    """
    Train the dual encoder and the GNN together.

    Every epoch the graph is rebuilt from the graph queries of that epoch:
    ``mgt`` splits the training queries into Q_g and Q_t by ``beta`` and
    trains on Q_t only; ``drop_edges`` builds the graph from every training
    query with the labeled positive edges removed; ``none`` uses every query
    for both. Retrieval for the graph and the layer-1 passage features come
    from the stage-1 model ``dual`` and never change during the run.

    Args:
        corpus: Corpus with qrels
        tokens: Tokenized corpus
        dual: Stage-1 dual encoder M_de (copied, not modified)
        cross: Frozen cross-encoder
        triples: Mined training triples
        config: Training configuration
        cache: Cached passage embeddings of ``dual``; built when omitted
        gnn: Starting GNN parameters; initialized from the seed when omitted
        on_epoch_end: Called with ``(epoch, dual, gnn)`` after every epoch
        model: Jointly trained dual encoder to continue from (copied); a copy
            of ``dual`` when omitted
        start_epoch: First epoch to run. Every epoch draws its split and
            batch order from ``(seed, epoch)`` alone, so resuming from the
            parameters saved after epoch ``start_epoch - 1`` reproduces an
            uninterrupted run

    Returns:
        JointResult with the trained dual encoder, GNN and history
    """
    if not cross.frozen:
        raise ConfigError("joint training requires a frozen cross-encoder")
    if not triples:
        raise DataError("no training triples")
    if not 0 <= start_epoch <= config.epochs:
        raise ConfigError(f"start_epoch must lie in [0, {config.epochs}], got {start_epoch}")
    cross_before = tensor_fingerprint(cross.tensors())
    mode = config.fusion_mode

    if gnn is None:
        gnn = GnnParams.init(
            config.dim,
            config.heads,
            np.random.default_rng(config.seed),
            slope=config.leaky_slope,
            use_edge_features=config.edge_features,
            activation=config.activation,
        )
    if cache is None:
        cache = EmbeddingCache.build(tokens, dual.passage)
    builder = GraphBuilder(tokens, dual.copy(), cross, config.k, passage_embeddings=cache.matrix)
    model = dual.copy() if model is None else model.copy()
    train_queries = sorted({t.query for t in triples})
    history = TrainingHistory()

    step = 0
    for epoch in range(start_epoch, config.epochs):
        seed = epoch_seed(config.seed, epoch)
        if config.mgt_mode == "mgt":
            split = split_masked(train_queries, config.beta, seed)
            history.splits.append(split)
            graph_queries, trained = split.graph_queries, set(split.train_queries)
        else:
            graph_queries, trained = tuple(train_queries), set(train_queries)

        graph = None
        if mode.combiner != "identity":
            graph = builder.build(graph_queries)
            if config.mgt_mode == "drop_edges":
                graph = drop_positive_edges(graph, corpus.qrels)
            if config.mgt_mode == "mgt" and trained & set(graph.passage_neighbors):
                raise GraphError(f"trained queries leaked into the graph in epoch {epoch}")

        epoch_triples = [t for t in triples if t.query in trained]
        epoch_losses = []
        for batch in _batches(epoch_triples, config.batch_size, seed):
            result = batch_loss(batch, model, tokens, gnn, graph, cache, mode)
            _check_finite(result.loss, epoch, step)
            model.sgd_step(result.dual, config.lr_dual)
            if result.gnn is not None:
                gnn.sgd_step(result.gnn, config.lr_gnn)
            history.record(epoch, step, result.loss)
            history.batches.append(tuple(t.query for t in batch))
            epoch_losses.append(result.loss)
            logger.debug(f"joint epoch {epoch} step {step} loss {result.loss:.6f}")
            step += 1

        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        logger.info(
            f"Joint epoch {epoch + 1}/{config.epochs}: {len(epoch_triples)} triples, "
            f"{len(graph_queries)} graph queries, mean loss {mean_loss:.4f}"
        )
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, gnn)

    cache.mark_stale("dual encoder updated by joint training")
    if tensor_fingerprint(cross.tensors()) != cross_before:
        raise NumericError("cross-encoder parameters changed during joint training")
    return JointResult(dual=model, gnn=gnn, history=history)
