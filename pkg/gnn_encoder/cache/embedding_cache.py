"""Cache of stage-1 passage embeddings used as layer-1 node features."""
from typing import Optional

import numpy as np

from gnn_encoder.ml.encoders import EncoderParams, TokenizedCorpus, encode_all
from gnn_encoder.models.errors import DimensionError, GraphError
from gnn_encoder.utils.logger import get_logger

logger = get_logger(__name__)


class EmbeddingCache:
    """
    Read-only passage embeddings computed once by M_de's passage encoder.

    Built at the start of a joint-training run and never refreshed during it.
    Lookups hand out views of a write-protected array, so any attempt to
    update an entry raises.
    """

    def __init__(self, embeddings: np.ndarray):
        """
        Initialize the cache.

        Args:
            embeddings: (m x d) passage embeddings in passage order
        """
        embeddings = np.array(embeddings, dtype=np.float64)
        if embeddings.ndim != 2 or embeddings.shape[0] == 0:
            raise DimensionError("cached passage embeddings", "(m>0, d)", embeddings.shape)
        embeddings.setflags(write=False)
        self._embeddings = embeddings
        self.stale = False
        self.lookups = 0

    @classmethod
    def build(cls, tokens: TokenizedCorpus, passage_encoder: EncoderParams) -> "EmbeddingCache":
        """Encode every passage once with ``passage_encoder``."""
        if not tokens.passages:
            raise GraphError("cannot cache an empty passage set")
        cache = cls(encode_all(tokens.passages, passage_encoder))
        logger.info(f"Cached {cache.size} passage embeddings (d={cache.dim})")
        return cache

    @property
    def size(self) -> int:
        return self._embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self._embeddings.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self._embeddings

    def get(self, passage: int) -> np.ndarray:
        """
        Get a cached embedding.

        Args:
            passage: Passage row position

        Returns:
            Read-only (d,) view
        """
        if not 0 <= passage < self.size:
            raise KeyError(f"passage {passage} is not cached")
        self.lookups += 1
        return self._embeddings[passage]

    def mark_stale(self, reason: Optional[str] = None) -> None:
        """Flag the cache as out of date with the current passage encoder."""
        if not self.stale:
            logger.debug(f"Embedding cache marked stale{': ' + reason if reason else ''}")
        self.stale = True
