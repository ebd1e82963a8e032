"""Retrieval run and evaluation models."""
from pydantic import BaseModel, Field, model_validator


class RankedPassage(BaseModel):
    passage: int = Field(..., ge=0, description="Corpus row position")
    score: float


class RetrievalRun(BaseModel):
    """Ranked passage lists keyed by query position."""

    cutoff: int = Field(..., gt=0)
    rankings: dict[int, list[RankedPassage]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def validate_order(self) -> "RetrievalRun":
        for query, ranked in self.rankings.items():
            if len(ranked) > self.cutoff:
                raise ValueError(f"query {query}: {len(ranked)} entries exceed cutoff {self.cutoff}")
            for a, b in zip(ranked, ranked[1:]):
                if b.score > a.score or (b.score == a.score and b.passage < a.passage):
                    raise ValueError(f"query {query}: ranking not in score/id order")
        return self

    def passages(self, query: int) -> list[int]:
        return [r.passage for r in self.rankings.get(query, [])]


class Metrics(BaseModel):
    """MRR at one cutoff and recall at several."""

    mrr_cutoff: int
    mrr: float = Field(..., ge=0.0, le=1.0)
    recall: dict[int, float] = Field(default_factory=dict)
    query_count: int
    skipped: int = 0

    def as_row(self) -> dict[str, float]:
        row = {f"mrr@{self.mrr_cutoff}": self.mrr}
        row.update({f"r@{k}": v for k, v in sorted(self.recall.items())})
        return row
