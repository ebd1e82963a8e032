"""Hashed bag-of-tokens dual encoder and cross-encoder surrogate."""
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from gnn_encoder.ml.numkit import affine
from gnn_encoder.models.corpus import Corpus
from gnn_encoder.models.errors import DataError, DimensionError
from gnn_encoder.models.training import TrainConfig

SEPARATOR_ID = 0

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_TOKEN_RE = re.compile(r"[^\W_]+")

TokenSequence = np.ndarray
Embedding = np.ndarray


def fnv1a_64(token: str) -> int:
    """FNV-1a, 64-bit, over the UTF-8 bytes of ``token``."""
    h = FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str, vocab_size: int) -> TokenSequence:
    """Lowercase, split on non-alphanumerics and hash into ``[1, vocab_size)``.

    Id 0 is reserved as the pair separator.
    """
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be at least 2, got {vocab_size}")
    words = _TOKEN_RE.findall(text.lower())
    if not words:
        raise DataError("empty after tokenization")
    return np.array([fnv1a_64(w) % (vocab_size - 1) + 1 for w in words], dtype=np.int64)


@dataclass
class EncoderParams:
    """Embedding table (V_h x d), projection (d x d) and bias (d)."""

    table: np.ndarray
    proj: np.ndarray
    bias: np.ndarray

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @classmethod
    def init(cls, vocab_size: int, dim: int, rng: np.random.Generator, table_scale: float = 1.0, **kwargs):
        return cls(
            table=rng.normal(0.0, table_scale, size=(vocab_size, dim)),
            proj=rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim)),
            bias=np.zeros(dim),
            **kwargs,
        )

    @classmethod
    def zeros(cls, vocab_size: int, dim: int, **kwargs):
        return cls(np.zeros((vocab_size, dim)), np.zeros((dim, dim)), np.zeros(dim), **kwargs)

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams.zeros(self.vocab_size, self.dim)

    def copy(self):
        return type(self)(**{name: np.copy(v) if isinstance(v, np.ndarray) else v for name, v in self.__dict__.items()})

    def tensors(self) -> dict[str, np.ndarray]:
        return {"table": self.table, "proj": self.proj, "bias": self.bias}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], **kwargs):
        table = np.asarray(tensors["table"], dtype=np.float64)
        proj = np.asarray(tensors["proj"], dtype=np.float64)
        bias = np.asarray(tensors["bias"], dtype=np.float64)
        dim = table.shape[1]
        if proj.shape != (dim, dim):
            raise DimensionError("projection", (dim, dim), proj.shape)
        if bias.shape != (dim,):
            raise DimensionError("projection bias", (dim,), bias.shape)
        return cls(table=np.array(table), proj=np.array(proj), bias=np.array(bias), **kwargs)

    def accumulate(self, other: "EncoderParams") -> None:
        self.table += other.table
        self.proj += other.proj
        self.bias += other.bias

    def sgd_step(self, grads: "EncoderParams", lr: float) -> None:
        if lr == 0.0:
            return
        self.table -= lr * grads.table
        self.proj -= lr * grads.proj
        self.bias -= lr * grads.bias


@dataclass
class CrossEncoderParams(EncoderParams):
    """Cross-encoder surrogate: same recipe over ``x ++ [SEP] ++ y``."""

    frozen: bool = True

    def sgd_step(self, grads: EncoderParams, lr: float) -> None:
        if self.frozen:
            raise RuntimeError("cross-encoder parameters are frozen")
        super().sgd_step(grads, lr)


@dataclass
class EncodeCache:
    unique: np.ndarray
    weights: np.ndarray
    pooled: np.ndarray
    out: np.ndarray


def encode_forward(tokens: TokenSequence, params: EncoderParams) -> EncodeCache:
    """Mean-pool table rows, project, tanh; keeps what the backward pass needs."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise DataError("cannot encode an empty token sequence")
    if tokens.min() < 0 or tokens.max() >= params.vocab_size:
        raise DataError(f"token id out of range [0, {params.vocab_size})")
    unique, counts = np.unique(tokens, return_counts=True)
    # weights are count / length so a single repeated token pools to its row exactly
    weights = counts / tokens.size
    pooled = weights @ params.table[unique]
    out = np.tanh(affine(params.proj, pooled, params.bias))
    return EncodeCache(unique=unique, weights=weights, pooled=pooled, out=out)


def encode_backward(cache: EncodeCache, g_out: np.ndarray, params: EncoderParams, grads: EncoderParams) -> None:
    """Accumulate d(loss)/d(params) into ``grads`` given d(loss)/d(output)."""
    g_pre = g_out * (1.0 - cache.out ** 2)
    grads.proj += np.outer(g_pre, cache.pooled)
    grads.bias += g_pre
    g_pooled = params.proj.T @ g_pre
    grads.table[cache.unique] += np.outer(cache.weights, g_pooled)


def encode(tokens: TokenSequence, params: EncoderParams) -> Embedding:
    return encode_forward(tokens, params).out


def second_segment(tokens: TokenSequence, vocab_size: int) -> TokenSequence:
    """Rotate ids of the second pair segment by half the vocabulary, staying in [1, vocab_size)."""
    span = vocab_size - 1
    return (np.asarray(tokens, dtype=np.int64) - 1 + span // 2) % span + 1


def pair_tokens(x: TokenSequence, y: TokenSequence, vocab_size: int) -> TokenSequence:
    """``x ++ [SEP] ++ y'`` where ``y'`` is ``y`` in the second-segment id space."""
    if len(x) == 0 or len(y) == 0:
        raise DataError("cross_encode needs two nonempty sequences")
    return np.concatenate(
        [np.asarray(x, dtype=np.int64), [SEPARATOR_ID], second_segment(y, vocab_size)]
    )


def cross_encode(x: TokenSequence, y: TokenSequence, params: CrossEncoderParams) -> Embedding:
    """Edge feature of the text pair ``(x, y)``; the segment shift keeps it order-sensitive."""
    return encode(pair_tokens(x, y, params.vocab_size), params)


def pair_score(x: TokenSequence, y: TokenSequence, params: CrossEncoderParams) -> float:
    """Relevance readout of the cross-encoder surrogate: sum of the pair embedding."""
    return float(cross_encode(x, y, params).sum())


def similarity(h_q: Embedding, h_p: Embedding) -> float:
    h_q = np.asarray(h_q, dtype=np.float64)
    h_p = np.asarray(h_p, dtype=np.float64)
    if h_q.shape != h_p.shape or h_q.ndim != 1:
        raise DimensionError("similarity operands", h_q.shape, h_p.shape)
    return float(h_q @ h_p)


def contrastive_loss(s_pos: float, s_negs: Sequence[float]) -> float:
    """``-log(e^{s+} / (e^{s+} + sum e^{s-}))`` via log-sum-exp."""
    values = np.concatenate([[s_pos], np.asarray(s_negs, dtype=np.float64)])
    top = values.max()
    lse = top + np.log(np.exp(values - top).sum())
    return max(float(lse - s_pos), 0.0)


def contrastive_loss_grad(s_pos: float, s_negs: Sequence[float]) -> tuple[float, np.ndarray]:
    """Derivatives of :func:`contrastive_loss` w.r.t. the positive and each negative score."""
    values = np.concatenate([[s_pos], np.asarray(s_negs, dtype=np.float64)])
    probs = np.exp(values - values.max())
    probs /= probs.sum()
    return float(probs[0] - 1.0), probs[1:]


@dataclass
class DualEncoder:
    """Query tower E_Q and passage tower E_P.

    With ``tied`` set, ``passage`` is the same object as ``query``. Untied
    towers start from equal copies and drift apart during training, so a
    token never seen in a training pair still maps to the same point on
    both sides.
    """

    query: EncoderParams
    passage: EncoderParams
    tied: bool = False

    @classmethod
    def init(cls, config: TrainConfig, rng: np.random.Generator) -> "DualEncoder":
        query = EncoderParams.init(config.vocab_size, config.dim, rng, config.table_scale)
        if config.tie_encoders:
            return cls(query=query, passage=query, tied=True)
        return cls(query=query, passage=query.copy())

    def zeros_like(self) -> "DualEncoder":
        query = self.query.zeros_like()
        return DualEncoder(query, query if self.tied else self.passage.zeros_like(), self.tied)

    def copy(self) -> "DualEncoder":
        query = self.query.copy()
        return DualEncoder(query, query if self.tied else self.passage.copy(), self.tied)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"query.{k}": v for k, v in self.query.tensors().items()}
        if not self.tied:
            out.update({f"passage.{k}": v for k, v in self.passage.tensors().items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], tied: bool = False) -> "DualEncoder":
        query = EncoderParams.from_tensors({k[6:]: v for k, v in tensors.items() if k.startswith("query.")})
        if tied:
            return cls(query, query, True)
        passage = EncoderParams.from_tensors({k[8:]: v for k, v in tensors.items() if k.startswith("passage.")})
        return cls(query, passage)

    def sgd_step(self, grads: "DualEncoder", lr: float) -> None:
        self.query.sgd_step(grads.query, lr)
        if not self.tied:
            self.passage.sgd_step(grads.passage, lr)


@dataclass
class TokenizedCorpus:
    """Token sequences for every query and passage of a corpus, by row position."""

    queries: list[TokenSequence]
    passages: list[TokenSequence]
    vocab_size: int

    @classmethod
    def from_corpus(cls, corpus: Corpus, vocab_size: int) -> "TokenizedCorpus":
        def run(ids, texts, kind):
            out = []
            for rid, text in zip(ids, texts):
                try:
                    out.append(tokenize(text, vocab_size))
                except DataError as e:
                    raise DataError(f"{kind} {rid!r}: {e}") from e
            return out

        return cls(
            queries=run(corpus.query_ids, corpus.query_texts, "query"),
            passages=run(corpus.passage_ids, corpus.passage_texts, "passage"),
            vocab_size=vocab_size,
        )


@dataclass
class EncodingTape:
    """Memoised encodings for one step, with gradient accumulation per text.

    Each query and passage is encoded at most once; gradients arriving for the
    same text are summed and pushed through the encoder once in ``backward``.
    """

    dual: DualEncoder
    tokens: TokenizedCorpus
    _queries: dict[int, EncodeCache] = field(default_factory=dict)
    _passages: dict[int, EncodeCache] = field(default_factory=dict)
    _query_grads: dict[int, np.ndarray] = field(default_factory=dict)
    _passage_grads: dict[int, np.ndarray] = field(default_factory=dict)

    def query(self, q: int) -> Embedding:
        if q not in self._queries:
            self._queries[q] = encode_forward(self.tokens.queries[q], self.dual.query)
        return self._queries[q].out

    def passage(self, p: int) -> Embedding:
        if p not in self._passages:
            self._passages[p] = encode_forward(self.tokens.passages[p], self.dual.passage)
        return self._passages[p].out

    def add_query_grad(self, q: int, g: np.ndarray) -> None:
        if q not in self._queries:
            raise KeyError(f"query {q} was never encoded on this tape")
        if q in self._query_grads:
            self._query_grads[q] = self._query_grads[q] + g
        else:
            self._query_grads[q] = np.array(g, dtype=np.float64)

    def add_passage_grad(self, p: int, g: np.ndarray) -> None:
        if p not in self._passages:
            raise KeyError(f"passage {p} was never encoded on this tape")
        if p in self._passage_grads:
            self._passage_grads[p] = self._passage_grads[p] + g
        else:
            self._passage_grads[p] = np.array(g, dtype=np.float64)

    def backward(self) -> DualEncoder:
        grads = self.dual.zeros_like()
        for q in sorted(self._query_grads):
            encode_backward(self._queries[q], self._query_grads[q], self.dual.query, grads.query)
        for p in sorted(self._passage_grads):
            encode_backward(self._passages[p], self._passage_grads[p], self.dual.passage, grads.passage)
        return grads


def encode_all(tokens: Sequence[TokenSequence], params: EncoderParams) -> np.ndarray:
    """Stack encodings of many sequences into an (n x d) matrix."""
    if not tokens:
        return np.zeros((0, params.dim))
    return np.vstack([encode(t, params) for t in tokens])


