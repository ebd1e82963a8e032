"""Corpus models."""
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

Split = Literal["train", "dev", "test"]


class TextRecord(BaseModel):
    """One line of passages.jsonl / queries.jsonl."""

    id: str = Field(..., min_length=1)
    text: str
    split: Split = "train"

    @field_validator("id")
    @classmethod
    def strip_id(cls, v: str) -> str:
        v = v.strip()
        if not v:
            raise ValueError("id cannot be empty")
        return v


class Corpus(BaseModel):
    """Passages, queries and relevance labels.

    Passages and queries are addressed by their row position; qrels are
    stored as ``(query position, passage position)`` pairs.
    """

    model_config = ConfigDict(frozen=True)

    passage_ids: tuple[str, ...]
    passage_texts: tuple[str, ...]
    query_ids: tuple[str, ...]
    query_texts: tuple[str, ...]
    splits: tuple[Split, ...]
    qrels: tuple[tuple[int, int], ...]

    _passage_pos: dict[str, int] = PrivateAttr(default_factory=dict)
    _query_pos: dict[str, int] = PrivateAttr(default_factory=dict)
    _positives: dict[int, tuple[int, ...]] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def validate_consistency(self) -> "Corpus":
        if len(self.passage_ids) != len(self.passage_texts):
            raise ValueError("passage ids and texts differ in length")
        if len(self.query_ids) != len(self.query_texts) or len(self.query_ids) != len(self.splits):
            raise ValueError("query ids, texts and splits differ in length")
        if len(set(self.passage_ids)) != len(self.passage_ids):
            raise ValueError("duplicate passage ids")
        if len(set(self.query_ids)) != len(self.query_ids):
            raise ValueError("duplicate query ids")
        for q, p in self.qrels:
            if not (0 <= q < len(self.query_ids) and 0 <= p < len(self.passage_ids)):
                raise ValueError(f"qrel ({q}, {p}) out of range")

        self._passage_pos = {pid: i for i, pid in enumerate(self.passage_ids)}
        self._query_pos = {qid: i for i, qid in enumerate(self.query_ids)}
        positives: dict[int, list[int]] = {}
        for q, p in self.qrels:
            bucket = positives.setdefault(q, [])
            if p not in bucket:
                bucket.append(p)
        self._positives = {q: tuple(sorted(ps)) for q, ps in positives.items()}
        return self

    @property
    def num_passages(self) -> int:
        return len(self.passage_ids)

    @property
    def num_queries(self) -> int:
        return len(self.query_ids)

    def passage_position(self, pid: str) -> int:
        return self._passage_pos[pid]

    def query_position(self, qid: str) -> int:
        return self._query_pos[qid]

    def has_passage(self, pid: str) -> bool:
        return pid in self._passage_pos

    def has_query(self, qid: str) -> bool:
        return qid in self._query_pos

    def positives(self, query: int) -> tuple[int, ...]:
        return self._positives.get(query, ())

    def queries_in(self, split: Split) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    @property
    def train_queries(self) -> list[int]:
        return self.queries_in("train")

    def qrel_pairs(self) -> set[tuple[int, int]]:
        return set(self.qrels)


class SyntheticConfig(BaseModel):
    """Parameters of the synthetic topical corpus."""

    m: int = Field(2000, ge=10, description="Number of passages")
    n_train: int = Field(400, ge=0)
    n_test: int = Field(100, ge=0)
    vocab_size: int = Field(5000, ge=50)
    noise: float = Field(0.2, ge=0.0, le=1.0, description="Query token replacement rate")
    topics: int = Field(20, gt=0)
    passage_len: tuple[int, int] = (20, 40)
    query_len: tuple[int, int] = (3, 6)
    topic_share: float = Field(0.8, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def validate_lengths(self) -> "SyntheticConfig":
        lo, hi = self.passage_len
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid passage_len {self.passage_len}")
        lo, hi = self.query_len
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid query_len {self.query_len}")
        if self.topics > self.vocab_size:
            raise ValueError("more topics than vocabulary words")
        return self
