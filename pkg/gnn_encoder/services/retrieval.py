"""Offline passage index, exact search, run files and evaluation."""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from gnn_encoder.config import settings
from gnn_encoder.ml.encoders import (
    CrossEncoderParams,
    DualEncoder,
    EncoderParams,
    TokenizedCorpus,
    TokenSequence,
    encode,
    encode_all,
    tokenize,
)
from gnn_encoder.ml.gnncore import GnnParams, NodeFeatures, forward_passages
from gnn_encoder.models.corpus import Corpus
from gnn_encoder.models.errors import DataError, DimensionError, StaleIndexError
from gnn_encoder.models.retrieval import Metrics, RankedPassage, RetrievalRun
from gnn_encoder.models.training import FusionMode
from gnn_encoder.services.checkpoint import model_fingerprint
from gnn_encoder.services.graphbuild import GraphBuilder, QueryPassageGraph, brute_force_topk
from gnn_encoder.utils.logger import get_logger

logger = get_logger(__name__)

INDEX_MAGIC = b"GDIX"
INDEX_VERSION = 1
_INDEX_HEADER = struct.Struct("<4sIIQ32s")


@dataclass(frozen=True)
class PassageIndex:
    """Query-interactive passage embeddings h'_p, one row per corpus passage.

    ``fingerprint`` is the content hash of the checkpoint holding the model
    that produced the rows.
    """

    embeddings: np.ndarray
    fingerprint: bytes

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise DimensionError("index embeddings", "(m, d)", emb.shape)
        if len(self.fingerprint) != 32:
            raise DataError(f"index fingerprint must be 32 bytes, got {len(self.fingerprint)}")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def _fuse_shard(
    shard: Sequence[int],
    graph: Optional[QueryPassageGraph],
    features: NodeFeatures,
    gnn: Optional[GnnParams],
    mode: FusionMode,
) -> np.ndarray:
    fwd = forward_passages(shard, graph, features, gnn, mode)
    return np.vstack([fwd.outputs[p] for p in shard])


def precompute_passage_index(
    tokens: TokenizedCorpus,
    train_queries: Iterable[int],
    dual: DualEncoder,
    gnn: Optional[GnnParams],
    cross: CrossEncoderParams,
    mode: FusionMode,
    k: int,
    n_jobs: Optional[int] = None,
    shard_size: int = 256,
) -> PassageIndex:
    """
    Compute h'_p for every passage with the final model.

    The inference graph uses every training query as a graph query and the
    final dual encoder for retrieval; all node features are fresh encodings.

    Args:
        tokens: Tokenized corpus
        train_queries: Query ids forming the inference graph
        dual: Final dual encoder
        gnn: Final GNN parameters (unused in identity mode)
        cross: Frozen cross-encoder for edge features
        mode: Fusion mode
        k: Edges per query
        n_jobs: Worker threads over passage shards (defaults to ``settings.n_jobs``)
        shard_size: Passages per shard

    Returns:
        PassageIndex in passage order
    """
    passage_embs = encode_all(tokens.passages, dual.passage)
    fingerprint = model_fingerprint(dual, cross, gnn)
    if mode.combiner == "identity":
        logger.info(f"Identity fusion: indexing {len(passage_embs)} raw passage embeddings")
        return PassageIndex(embeddings=passage_embs, fingerprint=fingerprint)

    graph = GraphBuilder(tokens, dual, cross, k, passage_embeddings=passage_embs).build(train_queries)
    query_embs: dict[int, np.ndarray] = {
        q: encode(tokens.queries[q], dual.query) for q in graph.query_ids
    }
    features = NodeFeatures(
        query=query_embs.__getitem__,
        passage=passage_embs.__getitem__,
        cached_passage=passage_embs.__getitem__,
    )
    passages = list(range(len(tokens.passages)))
    shards = [passages[i:i + shard_size] for i in range(0, len(passages), shard_size)]
    workers = settings.n_jobs if n_jobs is None else n_jobs
    blocks = Parallel(n_jobs=workers, prefer="threads")(
        delayed(_fuse_shard)(shard, graph, features, gnn, mode) for shard in shards
    )
    logger.info(
        f"Built index over {len(passages)} passages in {len(shards)} shards "
        f"({graph.num_queries} graph queries, k={k})"
    )
    return PassageIndex(embeddings=np.vstack(blocks), fingerprint=fingerprint)


def _check_fresh(
    index: PassageIndex,
    dual: DualEncoder,
    gnn: Optional[GnnParams],
    cross: Optional[CrossEncoderParams],
) -> None:
    if model_fingerprint(dual, cross, gnn) != index.fingerprint:
        raise StaleIndexError("stale index")
    if dual.query.dim != index.dim:
        raise DimensionError("query encoder output", (index.dim,), (dual.query.dim,))


def _rank(tokens: TokenSequence, index: PassageIndex, query_encoder: EncoderParams, K: int) -> list[RankedPassage]:
    h_q = encode(tokens, query_encoder)
    return [RankedPassage(passage=p, score=s) for p, s in brute_force_topk(h_q, index.embeddings, K)]


def search_tokens(
    tokens: TokenSequence,
    index: PassageIndex,
    dual: DualEncoder,
    K: int,
    gnn: Optional[GnnParams] = None,
    cross: Optional[CrossEncoderParams] = None,
) -> list[RankedPassage]:
    _check_fresh(index, dual, gnn, cross)
    return _rank(tokens, index, dual.query, K)


def search(
    query: str,
    index: PassageIndex,
    dual: DualEncoder,
    K: int,
    gnn: Optional[GnnParams] = None,
    cross: Optional[CrossEncoderParams] = None,
) -> list[RankedPassage]:
    """
    Encode ``query`` once and rank every indexed passage by ``E_Q(q) . h'_p``.

    ``dual``, ``gnn`` and ``cross`` must be the parameters the index was
    built with; anything else raises ``StaleIndexError``.
    """
    return search_tokens(tokenize(query, dual.query.vocab_size), index, dual, K, gnn, cross)


def search_many(
    queries: Iterable[int],
    tokens: TokenizedCorpus,
    index: PassageIndex,
    dual: DualEncoder,
    K: int,
    gnn: Optional[GnnParams] = None,
    cross: Optional[CrossEncoderParams] = None,
) -> RetrievalRun:
    _check_fresh(index, dual, gnn, cross)
    rankings = {q: _rank(tokens.queries[q], index, dual.query, K) for q in queries}
    return RetrievalRun(cutoff=K, rankings=rankings)


def _relevant_sets(qrels: Union[Corpus, Iterable[tuple[int, int]]]) -> dict[int, set[int]]:
    pairs = qrels.qrels if isinstance(qrels, Corpus) else qrels
    relevant: dict[int, set[int]] = {}
    for q, p in pairs:
        relevant.setdefault(q, set()).add(p)
    return relevant


def evaluate(
    run: RetrievalRun,
    qrels: Union[Corpus, Iterable[tuple[int, int]]],
    mrr_cutoff: int = 10,
    recall_cutoffs: Sequence[int] = (5, 20, 100),
) -> Metrics:
    """
    MRR at ``mrr_cutoff`` and recall at each of ``recall_cutoffs``.

    Recall divides by the query's total number of relevant passages. Run
    queries without any qrel are skipped and counted.
    """
    if not run.rankings:
        raise DataError("empty run")
    relevant = _relevant_sets(qrels)
    reciprocal: list[float] = []
    recalls: dict[int, list[float]] = {k: [] for k in recall_cutoffs}
    skipped = 0
    for q in sorted(run.rankings):
        rel = relevant.get(q)
        if not rel:
            skipped += 1
            continue
        ranked = run.passages(q)
        rank = next((i + 1 for i, p in enumerate(ranked[:mrr_cutoff]) if p in rel), None)
        reciprocal.append(1.0 / rank if rank else 0.0)
        for k in recall_cutoffs:
            recalls[k].append(len(rel.intersection(ranked[:k])) / len(rel))

    if skipped:
        logger.warning(f"Skipped {skipped} run queries without relevance judgments")
    if not reciprocal:
        raise DataError("no run query has relevance judgments")
    return Metrics(
        mrr_cutoff=mrr_cutoff,
        mrr=float(np.mean(reciprocal)),
        recall={k: float(np.mean(v)) for k, v in recalls.items()},
        query_count=len(reciprocal),
        skipped=skipped,
    )


def write_run(run: RetrievalRun, path: Union[str, Path], corpus: Corpus, tag: str = "gnn_encoder") -> None:
    """TREC run file: ``qid Q0 pid rank score tag`` per line."""
    rows = [
        {
            "qid": corpus.query_ids[q],
            "q0": "Q0",
            "pid": corpus.passage_ids[r.passage],
            "rank": rank,
            "score": r.score,
            "tag": tag,
        }
        for q in sorted(run.rankings)
        for rank, r in enumerate(run.rankings[q], start=1)
    ]
    frame = pd.DataFrame(rows, columns=["qid", "q0", "pid", "rank", "score", "tag"])
    frame.to_csv(path, sep=" ", header=False, index=False, float_format="%.17g")


def read_run(path: Union[str, Path], corpus: Corpus) -> RetrievalRun:
    try:
        frame = pd.read_csv(
            path,
            sep=r"\s+",
            header=None,
            names=["qid", "q0", "pid", "rank", "score", "tag"],
            dtype={"qid": str, "q0": str, "pid": str, "tag": str},
            float_precision="round_trip",
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"{path}: malformed run file: {e}") from e

    rankings: dict[int, list[RankedPassage]] = {}
    for line, row in enumerate(frame.itertuples(index=False), start=1):
        if not corpus.has_query(row.qid) or not corpus.has_passage(row.pid):
            raise DataError(f"{path}:{line}: unknown query or passage id ({row.qid}, {row.pid})")
        rankings.setdefault(corpus.query_position(row.qid), []).append(
            (int(row.rank), RankedPassage(passage=corpus.passage_position(row.pid), score=float(row.score)))
        )
    ordered = {q: [r for _, r in sorted(entries, key=lambda e: e[0])] for q, entries in rankings.items()}
    cutoff = max((len(v) for v in ordered.values()), default=1)
    return RetrievalRun(cutoff=cutoff, rankings=ordered)


def save_index(index: PassageIndex, path: Union[str, Path]) -> None:
    """Binary layout: magic, u32 version, u32 d, u64 m, 32-byte fingerprint, m x d ``<f8``."""
    header = _INDEX_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.dim, index.size, index.fingerprint)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(index.embeddings, dtype="<f8").tobytes())
    logger.info(f"Saved index ({index.size} x {index.dim}) to {path}")


def load_index(path: Union[str, Path]) -> PassageIndex:
    data = Path(path).read_bytes()
    if len(data) < _INDEX_HEADER.size:
        raise DataError(f"{path}: truncated index header")
    magic, version, dim, size, fingerprint = _INDEX_HEADER.unpack_from(data)
    if magic != INDEX_MAGIC:
        raise DataError(f"{path}: not an index file")
    if version != INDEX_VERSION:
        raise DataError(f"{path}: unsupported index version {version}")
    expected = _INDEX_HEADER.size + size * dim * 8
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(data)}")
    embeddings = np.frombuffer(data, dtype="<f8", offset=_INDEX_HEADER.size).reshape(size, dim)
    return PassageIndex(embeddings=embeddings.astype(np.float64), fingerprint=fingerprint)


def metrics_frame(results: Mapping[str, Metrics]) -> pd.DataFrame:
    """One row per named run, columns ``mrr@c`` and ``r@k``."""
    return pd.DataFrame([{"run": name, **m.as_row()} for name, m in results.items()])
