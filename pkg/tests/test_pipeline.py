"""Tests for the end-to-end training pipeline."""
import pytest

from gnn_encoder.models.corpus import SyntheticConfig
from gnn_encoder.models.errors import ConfigError, DataError
from gnn_encoder.models.training import FusionMode, TrainConfig
from gnn_encoder.services.corpus_io import gen_synthetic
from gnn_encoder.services.pipeline import SWEEP_COLUMNS, RetrievalPipeline


@pytest.fixture
def pipeline(small_corpus, small_config):
    return RetrievalPipeline(small_corpus, small_config)


@pytest.fixture
def stage(pipeline):
    return pipeline.train_stage_one()


class TestRetrievalPipeline:
    """Stage 0/1, joint training and evaluation."""

    def test_stage_one(self, pipeline, stage, small_corpus):
        """Mined triples cover every labeled train query; history spans both passes."""
        assert stage.cross.frozen
        assert {t.query for t in stage.triples} == set(small_corpus.train_queries)
        epochs = {row.epoch for row in stage.history.rows}
        assert epochs == set(range(2 * pipeline.config.stage1_epochs))

    def test_joint_end_to_end(self, pipeline, stage):
        """Joint training, index and evaluation produce bounded metrics."""
        result = pipeline.train_joint(stage)
        index = pipeline.build_index(result.dual, result.gnn, stage.cross)
        evaluation = pipeline.evaluate(index, result.dual, gnn=result.gnn, cross=stage.cross)
        assert evaluation.metrics.query_count == 4
        assert 0.0 <= evaluation.metrics.mrr <= 1.0

    def test_baseline(self, pipeline, stage):
        """The stage-1 encoder evaluated alone."""
        assert pipeline.baseline(stage).metrics.query_count == 4

    def test_with_config(self, pipeline):
        """Variants share tokens and validate updates."""
        variant = pipeline.with_config(k=2)
        assert variant.config.k == 2
        assert variant.tokens is pipeline.tokens
        assert pipeline.config.k == 3
        with pytest.raises(ConfigError):
            pipeline.with_config(beta=2.0)

    def test_sweep(self, pipeline, stage):
        """One row per value with the fixed column set."""
        frame = pipeline.sweep(stage, "beta", ["0.3", "0.6"])
        assert list(frame.columns) == SWEEP_COLUMNS
        assert list(frame["value"]) == [0.3, 0.6]
        with pytest.raises(ConfigError):
            pipeline.sweep(stage, "dim", [4])

    def test_missing_split(self, pipeline, stage):
        """Evaluating a split with no queries is a data error."""
        index = pipeline.build_index(stage.dual, None, stage.cross, FusionMode.identity())
        with pytest.raises(DataError):
            pipeline.evaluate(index, stage.dual, split="dev")


class TestDirectional:
    """Baseline and joint model both rank far above chance on a mid-size corpus."""

    def test_recall_above_random(self):
        corpus = gen_synthetic(
            SyntheticConfig(m=300, n_train=100, n_test=40, vocab_size=1000, topics=10), seed=3
        )
        config = TrainConfig(dim=64, vocab_size=1024, k=10, stage1_epochs=3, epochs=1, k_mine=20, seed=3)
        pipeline = RetrievalPipeline(corpus, config)
        stage = pipeline.train_stage_one()
        random_r5 = 5 / corpus.num_passages
        baseline = pipeline.baseline(stage).metrics
        assert baseline.recall[5] > 3 * random_r5

        result = pipeline.train_joint(stage)
        index = pipeline.build_index(result.dual, result.gnn, stage.cross)
        joint = pipeline.evaluate(index, result.dual, gnn=result.gnn, cross=stage.cross).metrics
        assert joint.query_count == 40
        assert joint.recall[5] > 3 * random_r5
