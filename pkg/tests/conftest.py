"""Shared fixtures: a small seeded corpus and freshly initialized models."""
import numpy as np
import pytest

from gnn_encoder.ml.encoders import CrossEncoderParams, DualEncoder, TokenizedCorpus
from gnn_encoder.ml.gnncore import GnnParams
from gnn_encoder.models.corpus import SyntheticConfig
from gnn_encoder.models.training import TrainConfig
from gnn_encoder.services.corpus_io import gen_synthetic


@pytest.fixture
def small_config():
    """Tiny, fast training configuration."""
    return TrainConfig(
        dim=8,
        vocab_size=128,
        heads=2,
        k=3,
        beta=0.5,
        epochs=2,
        stage1_epochs=2,
        batch_size=4,
        cross_epochs=1,
        k_mine=5,
        seed=3,
    )


@pytest.fixture
def small_corpus():
    """30 passages, 10 train and 4 test queries."""
    return gen_synthetic(
        SyntheticConfig(m=30, n_train=10, n_test=4, vocab_size=60, topics=4, passage_len=(5, 8)),
        seed=3,
    )


@pytest.fixture
def tokens(small_corpus, small_config):
    return TokenizedCorpus.from_corpus(small_corpus, small_config.vocab_size)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


@pytest.fixture
def dual(small_config):
    return DualEncoder.init(small_config, np.random.default_rng(5))


@pytest.fixture
def cross(small_config):
    return CrossEncoderParams.init(
        small_config.vocab_size, small_config.dim, np.random.default_rng(6), frozen=True
    )


@pytest.fixture
def gnn(small_config):
    return GnnParams.init(small_config.dim, small_config.heads, np.random.default_rng(7))
