"""Corpus files, synthetic corpus generation, triples and config files."""
import json
import re
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from gnn_encoder.models.corpus import Corpus, SyntheticConfig, TextRecord
from gnn_encoder.models.errors import ConfigError, DataError
from gnn_encoder.models.training import TrainConfig, TrainingTriple
from gnn_encoder.utils.logger import get_logger

logger = get_logger(__name__)

PASSAGES_FILE = "passages.jsonl"
QUERIES_FILE = "queries.jsonl"
QRELS_FILE = "qrels.tsv"

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]
_WORD_RE = re.compile(r"[^\W_]+")

PathLike = Union[str, Path]


def _read_jsonl(path: Path) -> list[tuple[int, TextRecord]]:
    if not path.exists():
        raise DataError(f"{path}: file not found")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append((lineno, TextRecord.model_validate(json.loads(line))))
            except (json.JSONDecodeError, ValidationError) as e:
                raise DataError(f"{path}:{lineno}: invalid record: {e}") from e
    return records


def _index_ids(path: Path, records: list[tuple[int, TextRecord]]) -> dict[str, int]:
    seen: dict[str, int] = {}
    for lineno, record in records:
        if record.id in seen:
            raise DataError(f"{path}:{lineno}: duplicate id {record.id!r} (first on line {seen[record.id]})")
        seen[record.id] = lineno
    return seen


def _read_qrels(path: Path, passage_ids: set[str], query_ids: set[str]) -> list[tuple[str, str]]:
    """``qid iter pid rel`` rows keyed by their line in the file; blank lines are skipped."""
    if not path.exists():
        raise DataError(f"{path}: file not found")
    rows, lines = [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4 or not fields[3].strip():
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated columns")
            rows.append(fields)
            lines.append(lineno)
    frame = pd.DataFrame(rows, columns=["qid", "iter", "pid", "rel"], index=pd.Index(lines, name="line"))

    pairs = []
    for row in frame.itertuples():
        if row.qid not in query_ids:
            raise DataError(f"{path}:{row.Index}: dangling query id {row.qid!r}")
        if row.pid not in passage_ids:
            raise DataError(f"{path}:{row.Index}: dangling passage id {row.pid!r}")
        if row.rel.strip() != "0":
            pairs.append((row.qid, row.pid))
    return pairs


def load_corpus(data_dir: PathLike) -> Corpus:
    """
    Load ``passages.jsonl``, ``queries.jsonl`` and ``qrels.tsv`` from a directory.

    Training queries without a qrel are dropped with a warning.

    Raises:
        DataError: Malformed lines, duplicate ids or dangling qrels, with line numbers
    """
    data_dir = Path(data_dir)
    passage_path, query_path = data_dir / PASSAGES_FILE, data_dir / QUERIES_FILE
    passages = _read_jsonl(passage_path)
    queries = _read_jsonl(query_path)
    _index_ids(passage_path, passages)
    _index_ids(query_path, queries)
    if not passages:
        raise DataError(f"{passage_path}: no passages")

    pairs = _read_qrels(
        data_dir / QRELS_FILE, {r.id for _, r in passages}, {r.id for _, r in queries}
    )
    labeled = {qid for qid, _ in pairs}
    kept = [r for _, r in queries if r.split != "train" or r.id in labeled]
    dropped = len(queries) - len(kept)
    if dropped:
        logger.warning(f"Dropped {dropped} training queries without a qrel")

    corpus = build_corpus([r for _, r in passages], kept, pairs)
    logger.info(
        f"Loaded corpus from {data_dir}: {corpus.num_passages} passages, "
        f"{corpus.num_queries} queries, {len(corpus.qrels)} qrels"
    )
    return corpus


def build_corpus(
    passages: Sequence[TextRecord], queries: Sequence[TextRecord], pairs: Sequence[tuple[str, str]]
) -> Corpus:
    """Assemble a Corpus from records and ``(query id, passage id)`` label pairs."""
    p_pos = {r.id: i for i, r in enumerate(passages)}
    q_pos = {r.id: i for i, r in enumerate(queries)}
    qrels = tuple(sorted({(q_pos[q], p_pos[p]) for q, p in pairs if q in q_pos}))
    try:
        return Corpus(
            passage_ids=tuple(r.id for r in passages),
            passage_texts=tuple(r.text for r in passages),
            query_ids=tuple(r.id for r in queries),
            query_texts=tuple(r.text for r in queries),
            splits=tuple(r.split for r in queries),
            qrels=qrels,
        )
    except ValidationError as e:
        raise DataError(str(e)) from e


def save_corpus(corpus: Corpus, data_dir: PathLike) -> None:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    with open(data_dir / PASSAGES_FILE, "w", encoding="utf-8") as f:
        for pid, text in zip(corpus.passage_ids, corpus.passage_texts):
            f.write(json.dumps({"id": pid, "text": text}) + "\n")
    with open(data_dir / QUERIES_FILE, "w", encoding="utf-8") as f:
        for qid, text, split in zip(corpus.query_ids, corpus.query_texts, corpus.splits):
            f.write(json.dumps({"id": qid, "text": text, "split": split}) + "\n")
    frame = pd.DataFrame(
        [
            {"qid": corpus.query_ids[q], "iter": 0, "pid": corpus.passage_ids[p], "rel": 1}
            for q, p in corpus.qrels
        ],
        columns=["qid", "iter", "pid", "rel"],
    )
    frame.to_csv(data_dir / QRELS_FILE, sep="\t", header=False, index=False)
    logger.info(f"Wrote corpus to {data_dir}")


def synthetic_word(index: int) -> str:
    """Deterministic pronounceable word for a vocabulary index (at least two syllables)."""
    digits = []
    while True:
        index, rem = divmod(index, len(_SYLLABLES))
        digits.append(rem)
        if index == 0:
            break
    while len(digits) < 2:
        digits.append(0)
    return "".join(_SYLLABLES[d] for d in reversed(digits))


def gen_synthetic(config: SyntheticConfig, seed: int) -> Corpus:
    """
    Generate a topical corpus with one labeled passage per query.

    Each passage draws a topic; a ``topic_share`` fraction of its tokens come
    from that topic's slice of the vocabulary and the rest from the whole
    vocabulary. Each query samples tokens from its source passage and
    replaces each one with a random word with probability ``noise``.

    Args:
        config: Generator parameters
        seed: Random seed

    Returns:
        Corpus with ``n_train`` train and ``n_test`` test queries
    """
    rng = np.random.default_rng(seed)
    vocab = [synthetic_word(i) for i in range(config.vocab_size)]
    bounds = np.linspace(0, config.vocab_size, config.topics + 1).astype(int)

    passage_tokens: list[np.ndarray] = []
    for _ in range(config.m):
        topic = rng.integers(config.topics)
        length = rng.integers(config.passage_len[0], config.passage_len[1] + 1)
        from_topic = rng.random(length) < config.topic_share
        topical = rng.integers(bounds[topic], bounds[topic + 1], size=length)
        general = rng.integers(0, config.vocab_size, size=length)
        passage_tokens.append(np.where(from_topic, topical, general))

    n = config.n_train + config.n_test
    sources = rng.choice(config.m, size=n, replace=n > config.m)
    query_texts = []
    for source in sources:
        tokens = passage_tokens[source]
        length = rng.integers(config.query_len[0], config.query_len[1] + 1)
        picked = rng.choice(tokens, size=length, replace=length > len(tokens))
        noisy = rng.random(length) < config.noise
        replaced = np.where(noisy, rng.integers(0, config.vocab_size, size=length), picked)
        query_texts.append(" ".join(vocab[t] for t in replaced))

    passages = [
        TextRecord(id=f"p{i}", text=" ".join(vocab[t] for t in toks)) for i, toks in enumerate(passage_tokens)
    ]
    queries = [
        TextRecord(id=f"q{i}", text=text, split="train" if i < config.n_train else "test")
        for i, text in enumerate(query_texts)
    ]
    pairs = [(f"q{i}", f"p{int(s)}") for i, s in enumerate(sources)]
    corpus = build_corpus(passages, queries, pairs)
    logger.info(
        f"Generated synthetic corpus: {config.m} passages, {config.n_train} train / "
        f"{config.n_test} test queries (seed={seed})"
    )
    return corpus


def _words(text: str) -> set[str]:
    return set(_WORD_RE.findall(text.lower()))


def overlap_stats(corpus: Corpus) -> float:
    """Mean share of a query's distinct words that occur in its labeled positives."""
    shares = []
    for q in range(corpus.num_queries):
        positives = corpus.positives(q)
        words = _words(corpus.query_texts[q])
        if not positives or not words:
            continue
        passage_words = set().union(*(_words(corpus.passage_texts[p]) for p in positives))
        shares.append(len(words & passage_words) / len(words))
    return float(np.mean(shares)) if shares else 0.0


def write_triples(triples: Sequence[TrainingTriple], corpus: Corpus, path: PathLike) -> None:
    """TSV of ``q_id p_pos_id p_neg_id`` rows."""
    frame = pd.DataFrame(
        [
            {
                "q_id": corpus.query_ids[t.query],
                "p_pos_id": corpus.passage_ids[t.positive],
                "p_neg_id": corpus.passage_ids[t.negative],
            }
            for t in triples
        ],
        columns=["q_id", "p_pos_id", "p_neg_id"],
    )
    frame.to_csv(path, sep="\t", header=False, index=False)


def read_triples(path: PathLike, corpus: Corpus) -> list[TrainingTriple]:
    try:
        frame = pd.read_csv(path, sep="\t", header=None, names=["q_id", "p_pos_id", "p_neg_id"], dtype=str)
    except pd.errors.EmptyDataError:
        return []
    except (pd.errors.ParserError, FileNotFoundError) as e:
        raise DataError(f"{path}: cannot read triples: {e}") from e

    triples = []
    for lineno, row in enumerate(frame.itertuples(index=False), start=1):
        ids = (row.q_id, row.p_pos_id, row.p_neg_id)
        if not corpus.has_query(ids[0]) or not corpus.has_passage(ids[1]) or not corpus.has_passage(ids[2]):
            raise DataError(f"{path}:{lineno}: unknown id in {ids}")
        try:
            triples.append(
                TrainingTriple(
                    query=corpus.query_position(ids[0]),
                    positive=corpus.passage_position(ids[1]),
                    negative=corpus.passage_position(ids[2]),
                )
            )
        except ValidationError as e:
            raise DataError(f"{path}:{lineno}: {e}") from e
    return triples


def load_config(path: Optional[PathLike] = None, **overrides) -> TrainConfig:
    """Defaults, then the ``key=value`` file at ``path``, then ``overrides``."""
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    return TrainConfig.from_text(text, **overrides)
