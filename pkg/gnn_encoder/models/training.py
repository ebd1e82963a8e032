"""Training configuration and training-record models."""
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from gnn_encoder.models.errors import ConfigError


class FusionMode(BaseModel):
    """How aggregated query context is merged into passage embeddings.

    ``combiner`` picks exactly one of the gate, constant-alpha or identity
    paths; ``use_edge_features`` and ``one_layer`` are flags that compose with
    any combiner.
    """

    model_config = ConfigDict(frozen=True)

    combiner: Literal["gate", "constant_alpha", "identity"] = "gate"
    alpha: float = Field(0.2, description="Mixing weight for constant_alpha")
    use_edge_features: bool = True
    one_layer: bool = False

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {v}")
        return v

    @classmethod
    def gate(cls, **flags) -> "FusionMode":
        return cls(combiner="gate", **flags)

    @classmethod
    def identity(cls) -> "FusionMode":
        return cls(combiner="identity")

    @classmethod
    def constant_alpha(cls, alpha: float = 0.2, **flags) -> "FusionMode":
        return cls(combiner="constant_alpha", alpha=alpha, **flags)


class TrainConfig(BaseModel):
    """Every hyperparameter of a training run.

    Learning rates keep a 25x GNN/dual ratio and a 10x stage-1/joint ratio.
    """

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    dim: int = Field(32, gt=0)
    vocab_size: int = Field(4096, ge=2)
    heads: int = Field(2, gt=0)
    k: int = Field(25, gt=0, description="Edges per query node")
    beta: float = Field(0.05, description="Masked ratio")
    epochs: int = Field(5, gt=0)
    stage1_epochs: int = Field(10, gt=0)
    batch_size: int = Field(32, gt=0)
    lr_stage1: float = Field(0.02, ge=0)
    lr_dual: float = Field(0.002, ge=0)
    lr_gnn: float = Field(0.05, ge=0)
    lr_cross: float = Field(0.05, ge=0)
    cross_epochs: int = Field(5, gt=0)
    cross_negatives: int = Field(4, gt=0)
    seed: int = 13
    fusion: Literal["gate", "constant_alpha", "identity"] = "gate"
    alpha: float = 0.2
    edge_features: bool = True
    one_layer: bool = False
    mgt_mode: Literal["mgt", "drop_edges", "none"] = "mgt"
    activation: Literal["elu", "identity"] = "elu"
    leaky_slope: float = 0.2
    tie_encoders: bool = False
    k_mine: int = Field(50, ge=2)
    tau: float = 50.0
    table_scale: float = Field(1.0, gt=0)

    @field_validator("beta")
    @classmethod
    def validate_beta(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {v}")
        return v

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {v}")
        return v

    @field_validator("leaky_slope")
    @classmethod
    def validate_slope(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError(f"leaky_slope must lie in (0, 1), got {v}")
        return v

    @field_validator("tau")
    @classmethod
    def validate_tau(cls, v: float) -> float:
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"tau is a percentile in [0, 100], got {v}")
        return v

    @model_validator(mode="after")
    def validate_heads(self) -> "TrainConfig":
        if self.dim % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide dim ({self.dim})")
        return self

    @property
    def fusion_mode(self) -> FusionMode:
        return FusionMode(
            combiner=self.fusion,
            alpha=self.alpha,
            use_edge_features=self.edge_features,
            one_layer=self.one_layer,
        )

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_text(self) -> str:
        """Canonical ``key=value`` form: every field, sorted by key."""
        values = self.model_dump()
        lines = []
        for key in sorted(values):
            value = values[key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse flat ``key=value`` text; ``overrides`` win over file values."""
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise ConfigError(str(e)) from e


class TrainingTriple(BaseModel):
    """Query, denoised positive and hard negative, as corpus row positions."""

    model_config = ConfigDict(frozen=True)

    query: int = Field(..., ge=0)
    positive: int = Field(..., ge=0)
    negative: int = Field(..., ge=0)

    @model_validator(mode="after")
    def validate_distinct(self) -> "TrainingTriple":
        if self.positive == self.negative:
            raise ValueError("positive and negative passage must differ")
        return self


class EpochSplit(BaseModel):
    """One epoch's partition of training queries for Masked Graph Training."""

    model_config = ConfigDict(frozen=True)

    graph_queries: tuple[int, ...]
    train_queries: tuple[int, ...]
    beta: float
    seed: int

    @model_validator(mode="after")
    def validate_partition(self) -> "EpochSplit":
        if set(self.graph_queries) & set(self.train_queries):
            raise ValueError("graph and training queries overlap")
        return self


class MiningResult(BaseModel):
    """Output of hard-negative mining."""

    triples: list[TrainingTriple]
    skipped: int = Field(0, description="Queries without a labeled positive")
    fallbacks: int = Field(0, description="Queries that used the fallback negative")


class GradReport(BaseModel):
    """Outcome of a finite-difference gradient check."""

    max_rel_error: float
    passed: bool
    worst_index: int
    tol: float
    checked: int


class HistoryRow(BaseModel):
    epoch: int
    step: int
    loss: float


class TrainingHistory(BaseModel):
    """Loss curve and per-epoch bookkeeping of a training run."""

    rows: list[HistoryRow] = Field(default_factory=list)
    splits: list[EpochSplit] = Field(default_factory=list)
    batches: list[tuple[int, ...]] = Field(
        default_factory=list, description="Query ids of every step's batch"
    )

    def record(self, epoch: int, step: int, loss: float) -> None:
        self.rows.append(HistoryRow(epoch=epoch, step=step, loss=loss))

    @property
    def losses(self) -> list[float]:
        return [row.loss for row in self.rows]

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame(
            [row.model_dump() for row in self.rows], columns=["epoch", "step", "loss"]
        )

    def write_tsv(self, path) -> None:
        self.to_frame().to_csv(path, sep="\t", index=False, header=False)
