"""End-to-end training pipeline shared by the CLI, sweeps and the acceptance script."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import pandas as pd

from gnn_encoder.cache.embedding_cache import EmbeddingCache
from gnn_encoder.ml.encoders import CrossEncoderParams, DualEncoder, TokenizedCorpus
from gnn_encoder.ml.gnncore import GnnParams
from gnn_encoder.ml.trainer import (
    EpochCallback,
    JointResult,
    denoise_and_mine,
    joint_train,
    random_negative_triples,
    train_cross_encoder,
    train_dual_encoder,
)
from gnn_encoder.models.corpus import Corpus
from gnn_encoder.models.errors import CheckpointError, ConfigError, DataError
from gnn_encoder.models.retrieval import Metrics, RetrievalRun
from gnn_encoder.models.training import (
    FusionMode,
    MiningResult,
    TrainConfig,
    TrainingHistory,
    TrainingTriple,
)
from gnn_encoder.services.checkpoint import Checkpoint
from gnn_encoder.services.retrieval import PassageIndex, evaluate, precompute_passage_index, search_many
from gnn_encoder.utils.logger import get_logger

logger = get_logger(__name__)

SWEEP_COLUMNS = ["param", "value", "mrr@10", "r@5", "r@20", "r@100"]
SWEEPABLE = {"k": int, "beta": float}


@dataclass
class StageOne:
    """Stage-0/1 artifacts: cross-encoder, dual encoder M_de and mined triples."""

    cross: CrossEncoderParams
    dual: DualEncoder
    mining: MiningResult
    history: TrainingHistory = field(default_factory=TrainingHistory)

    @property
    def triples(self) -> list[TrainingTriple]:
        return self.mining.triples


@dataclass
class Evaluation:
    run: RetrievalRun
    metrics: Metrics


class RetrievalPipeline:
    """
    Trains and evaluates a GNN-encoder retriever on one corpus.

    Stage 0 fits the cross-encoder surrogate, stage 1 trains the dual encoder
    on random negatives, mines hard negatives with it and retrains, then
    joint training adds the GNN.
    """

    def __init__(self, corpus: Corpus, config: TrainConfig):
        """
        Initialize the pipeline.

        Args:
            corpus: Corpus with train and test queries
            config: Training configuration
        """
        if not corpus.train_queries:
            raise DataError("corpus has no training queries")
        self.corpus = corpus
        self.config = config
        self.tokens = TokenizedCorpus.from_corpus(corpus, config.vocab_size)

    def with_config(self, **updates) -> "RetrievalPipeline":
        """Same corpus and tokens under a modified config."""
        try:
            config = TrainConfig.model_validate({**self.config.model_dump(), **updates})
        except ValueError as e:
            raise ConfigError(str(e)) from e
        clone = RetrievalPipeline.__new__(RetrievalPipeline)
        clone.corpus, clone.config, clone.tokens = self.corpus, config, self.tokens
        return clone

    def fit_cross_encoder(self) -> CrossEncoderParams:
        logger.info("Stage 0: fitting cross-encoder surrogate")
        return train_cross_encoder(self.corpus, self.tokens, self.config)

    def mine(self, dual: DualEncoder, cross: CrossEncoderParams) -> MiningResult:
        return denoise_and_mine(
            self.corpus.train_queries,
            dual,
            cross,
            self.corpus,
            self.tokens,
            self.config.k_mine,
            self.config.tau,
        )

    def train_stage_one(self, cross: Optional[CrossEncoderParams] = None) -> StageOne:
        """Bootstrap on random negatives, mine hard negatives, retrain."""
        cross = cross or self.fit_cross_encoder()
        bootstrap = random_negative_triples(self.corpus, self.config.seed)
        if not bootstrap:
            raise DataError("no labeled training queries")
        logger.info(f"Stage 1: bootstrap on {len(bootstrap)} random-negative triples")
        dual, history = train_dual_encoder(bootstrap, self.config, self.tokens)

        mining = self.mine(dual, cross)
        if not mining.triples:
            raise DataError("mining produced no triples")
        logger.info(f"Stage 1: retraining on {len(mining.triples)} mined triples")
        dual, retrain_history = train_dual_encoder(mining.triples, self.config, self.tokens, dual=dual)
        offset = history.rows[-1].epoch + 1 if history.rows else 0
        step_offset = len(history.rows)
        for row in retrain_history.rows:
            history.record(row.epoch + offset, row.step + step_offset, row.loss)
        history.batches.extend(retrain_history.batches)
        return StageOne(cross=cross, dual=dual, mining=mining, history=history)

    def resume_epoch(self, ckpt: Checkpoint) -> int:
        """Joint epochs already finished by ``ckpt``, checked against this run's seed."""
        state = ckpt.rng_state
        if "seed" not in state or "joint_epochs" not in state:
            raise CheckpointError("checkpoint carries no resumable RNG state")
        if state["seed"] != self.config.seed:
            raise ConfigError(f"checkpoint was trained with seed {state['seed']}, not {self.config.seed}")
        if ckpt.gnn is None and self.config.fusion != "identity":
            raise CheckpointError("checkpoint has no GNN parameters to resume from")
        return int(state["joint_epochs"])

    def train_joint(
        self,
        stage: StageOne,
        on_epoch_end: Optional[EpochCallback] = None,
        cache: Optional[EmbeddingCache] = None,
        resume: Optional[Checkpoint] = None,
    ) -> JointResult:
        """Joint training from ``stage``, or continued from the epoch checkpoint ``resume``."""
        logger.info(
            f"Joint training: fusion={self.config.fusion}, mgt_mode={self.config.mgt_mode}, "
            f"k={self.config.k}, beta={self.config.beta}"
        )
        model = gnn = None
        start_epoch = 0
        if resume is not None:
            start_epoch = self.resume_epoch(resume)
            model = resume.dual
            gnn = resume.gnn.copy() if resume.gnn is not None else None
            logger.info(f"Resuming joint training after epoch {start_epoch}")
        return joint_train(
            self.corpus,
            self.tokens,
            stage.dual,
            stage.cross,
            stage.triples,
            self.config,
            cache=cache,
            gnn=gnn,
            on_epoch_end=on_epoch_end,
            model=model,
            start_epoch=start_epoch,
        )

    def build_index(
        self,
        dual: DualEncoder,
        gnn: Optional[GnnParams],
        cross: CrossEncoderParams,
        mode: Optional[FusionMode] = None,
    ) -> PassageIndex:
        return precompute_passage_index(
            self.tokens,
            self.corpus.train_queries,
            dual,
            gnn,
            cross,
            mode or self.config.fusion_mode,
            self.config.k,
        )

    def evaluate(
        self,
        index: PassageIndex,
        dual: DualEncoder,
        split: str = "test",
        K: int = 100,
        gnn: Optional[GnnParams] = None,
        cross: Optional[CrossEncoderParams] = None,
    ) -> Evaluation:
        """Search ``split`` with the model that built ``index`` and score the run."""
        queries = self.corpus.queries_in(split)
        if not queries:
            raise DataError(f"no {split} queries to evaluate")
        run = search_many(queries, self.tokens, index, dual, K, gnn=gnn, cross=cross)
        metrics = evaluate(run, self.corpus)
        logger.info(f"Evaluation on {split} ({metrics.query_count} queries): {metrics.as_row()}")
        return Evaluation(run=run, metrics=metrics)

    def baseline(self, stage: StageOne, split: str = "test") -> Evaluation:
        """The stage-1 dual encoder alone."""
        index = self.build_index(stage.dual, None, stage.cross, FusionMode.identity())
        return self.evaluate(index, stage.dual, split, cross=stage.cross)

    def checkpoint(
        self,
        dual: DualEncoder,
        cross: CrossEncoderParams,
        gnn: Optional[GnnParams] = None,
        joint_epochs: int = 0,
    ) -> Checkpoint:
        """Snapshot after ``joint_epochs`` finished joint epochs (0 for stage 1)."""
        return Checkpoint(
            config=self.config,
            dual=dual,
            cross=cross,
            gnn=gnn,
            rng_state={"seed": self.config.seed, "joint_epochs": joint_epochs},
        )

    def sweep(self, stage: StageOne, param: str, values: Sequence[Union[int, float]]) -> pd.DataFrame:
        """Rerun joint training, index build and evaluation for each value of ``param``."""
        if param not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {param!r}; choose one of {sorted(SWEEPABLE)}")
        rows = []
        cache = EmbeddingCache.build(self.tokens, stage.dual.passage)
        for value in values:
            value = SWEEPABLE[param](value)
            variant = self.with_config(**{param: value})
            result = variant.train_joint(stage, cache=cache)
            index = variant.build_index(result.dual, result.gnn, stage.cross)
            metrics = variant.evaluate(index, result.dual, gnn=result.gnn, cross=stage.cross).metrics
            rows.append({"param": param, "value": value, **metrics.as_row()})
        return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def write_sweep(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    frame.to_csv(path, sep="\t", index=False, float_format="%.6f")
