"""Command-line entry point: ``python -m gnn_encoder.main <command>``."""
import argparse
import sys
from pathlib import Path
from typing import Callable, Optional

from dotenv import load_dotenv

# Load environment variables before settings are read
load_dotenv()

import pandas as pd  # noqa: E402

from gnn_encoder import __version__  # noqa: E402
from gnn_encoder.config import settings  # noqa: E402
from gnn_encoder.ml.encoders import encode  # noqa: E402
from gnn_encoder.ml.gnncore import NodeFeatures, attention_dump, layer2_attention, positive_attention_share  # noqa: E402
from gnn_encoder.ml.gradcheck import run_gradient_suite  # noqa: E402
from gnn_encoder.models.corpus import SyntheticConfig  # noqa: E402
from gnn_encoder.models.errors import (  # noqa: E402
    CheckpointError,
    ConfigError,
    DataError,
    GnnEncoderError,
    GraphError,
    NumericError,
    StaleIndexError,
)
from gnn_encoder.models.training import FusionMode, MiningResult, TrainConfig  # noqa: E402
from gnn_encoder.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint  # noqa: E402
from gnn_encoder.services.corpus_io import (  # noqa: E402
    gen_synthetic,
    load_config,
    load_corpus,
    overlap_stats,
    read_triples,
    save_corpus,
    write_triples,
)
from gnn_encoder.services.graphbuild import GraphBuilder  # noqa: E402
from gnn_encoder.services.pipeline import RetrievalPipeline, StageOne, write_sweep  # noqa: E402
from gnn_encoder.services.retrieval import load_index, save_index, search, write_run  # noqa: E402
from gnn_encoder.utils.logger import get_logger  # noqa: E402

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

STAGE1_CKPT = "stage1.ckpt"
MODEL_CKPT = "model.ckpt"
TRIPLES_FILE = "triples.tsv"
INDEX_FILE = "index.bin"


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _overrides(args) -> dict[str, str]:
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return overrides


def _config(args) -> TrainConfig:
    return load_config(args.config, **_overrides(args))


def _checkpoint_config(args, ckpt: Checkpoint) -> TrainConfig:
    """Checkpoint config, then the --config file, then flags."""
    text = ckpt.config.to_text()
    if args.config:
        text += Path(args.config).read_text(encoding="utf-8")
    return TrainConfig.from_text(text, **_overrides(args))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(args, default: str) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(args.out) / default


def cmd_gen_data(args) -> int:
    config = _config(args)
    synthetic = SyntheticConfig(
        m=args.m, n_train=args.n_train, n_test=args.n_test, vocab_size=args.vocab, noise=args.noise
    )
    corpus = gen_synthetic(synthetic, config.seed)
    save_corpus(corpus, _out(args))
    logger.info(f"Mean query/positive word overlap: {overlap_stats(corpus):.4f}")
    return EXIT_OK


def cmd_train_dual(args) -> int:
    config = _config(args)
    out = _out(args)
    pipeline = RetrievalPipeline(load_corpus(args.data), config)
    stage = pipeline.train_stage_one()
    save_checkpoint(out / STAGE1_CKPT, pipeline.checkpoint(stage.dual, stage.cross))
    write_triples(stage.triples, pipeline.corpus, out / TRIPLES_FILE)
    stage.history.write_tsv(out / "stage1_log.tsv")
    return EXIT_OK


def cmd_mine(args) -> int:
    ckpt = load_checkpoint(_checkpoint_path(args, STAGE1_CKPT))
    config = _checkpoint_config(args, ckpt)
    pipeline = RetrievalPipeline(load_corpus(args.data), config)
    mining = pipeline.mine(ckpt.dual, ckpt.cross)
    write_triples(mining.triples, pipeline.corpus, _out(args) / TRIPLES_FILE)
    return EXIT_OK


def _stage_from(args, pipeline: RetrievalPipeline, ckpt: Checkpoint) -> StageOne:
    if ckpt.cross is None:
        raise CheckpointError("checkpoint has no cross-encoder; run train-dual first")
    triples_path = Path(args.triples) if args.triples else Path(args.out) / TRIPLES_FILE
    triples = read_triples(triples_path, pipeline.corpus)
    if not triples:
        raise DataError(f"{triples_path}: no triples")
    return StageOne(cross=ckpt.cross, dual=ckpt.dual, mining=MiningResult(triples=triples))


def cmd_train_joint(args) -> int:
    ckpt = load_checkpoint(_checkpoint_path(args, STAGE1_CKPT))
    config = _checkpoint_config(args, ckpt)
    out = _out(args)
    pipeline = RetrievalPipeline(load_corpus(args.data), config)
    stage = _stage_from(args, pipeline, ckpt)

    resume = load_checkpoint(args.resume) if args.resume else None

    def save_epoch(epoch, dual, gnn):
        ckpt = pipeline.checkpoint(dual, stage.cross, gnn, joint_epochs=epoch + 1)
        save_checkpoint(out / f"epoch{epoch + 1}.ckpt", ckpt)

    result = pipeline.train_joint(stage, on_epoch_end=save_epoch, resume=resume)
    save_checkpoint(
        out / MODEL_CKPT,
        pipeline.checkpoint(result.dual, stage.cross, result.gnn, joint_epochs=config.epochs),
    )
    result.history.write_tsv(out / "train_log.tsv")
    return EXIT_OK


def _model_mode(config: TrainConfig, ckpt: Checkpoint) -> FusionMode:
    if ckpt.gnn is None and config.fusion != "identity":
        logger.warning("Checkpoint has no GNN parameters; indexing raw passage embeddings")
        return FusionMode.identity()
    return config.fusion_mode


def cmd_build_index(args) -> int:
    ckpt = load_checkpoint(_checkpoint_path(args, MODEL_CKPT))
    config = _checkpoint_config(args, ckpt)
    pipeline = RetrievalPipeline(load_corpus(args.data), config)
    if ckpt.cross is None:
        raise CheckpointError("checkpoint has no cross-encoder")
    index = pipeline.build_index(ckpt.dual, ckpt.gnn, ckpt.cross, _model_mode(config, ckpt))
    save_index(index, _out(args) / INDEX_FILE)
    return EXIT_OK


def _index_path(args) -> Path:
    return Path(args.index) if args.index else Path(args.out) / INDEX_FILE


def cmd_search(args) -> int:
    ckpt = load_checkpoint(_checkpoint_path(args, MODEL_CKPT))
    corpus = load_corpus(args.data)
    index = load_index(_index_path(args))
    hits = search(args.query, index, ckpt.dual, args.top_k, ckpt.gnn, ckpt.cross)
    for rank, hit in enumerate(hits, start=1):
        print(f"{rank}\t{corpus.passage_ids[hit.passage]}\t{hit.score:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(_checkpoint_path(args, MODEL_CKPT))
    config = _checkpoint_config(args, ckpt)
    pipeline = RetrievalPipeline(load_corpus(args.data), config)
    index = load_index(_index_path(args))
    evaluation = pipeline.evaluate(
        index, ckpt.dual, split=args.split, K=args.top_k, gnn=ckpt.gnn, cross=ckpt.cross
    )
    out = _out(args)
    write_run(evaluation.run, out / f"run.{args.split}.trec", pipeline.corpus)
    row = {"split": args.split, **evaluation.metrics.as_row(), "queries": evaluation.metrics.query_count}
    pd.DataFrame([row]).to_csv(out / "metrics.tsv", sep="\t", index=False, float_format="%.6f")
    for name, value in evaluation.metrics.as_row().items():
        print(f"{name}\t{value:.4f}")
    return EXIT_OK


def cmd_dump_attn(args) -> int:
    ckpt = load_checkpoint(_checkpoint_path(args, MODEL_CKPT))
    config = _checkpoint_config(args, ckpt)
    corpus = load_corpus(args.data)
    pipeline = RetrievalPipeline(corpus, config)
    if ckpt.gnn is None or ckpt.cross is None or config.fusion == "identity":
        raise ConfigError("dump-attn needs a joint checkpoint with a non-identity fusion mode")
    if not corpus.has_passage(args.passage):
        raise DataError(f"unknown passage id {args.passage!r}")
    passage = corpus.passage_position(args.passage)

    tokens = pipeline.tokens
    builder = GraphBuilder(tokens, ckpt.dual, ckpt.cross, config.k)
    graph = builder.build(corpus.train_queries)
    features = NodeFeatures(
        query=lambda q: encode(tokens.queries[q], ckpt.dual.query),
        passage=builder.passage_embeddings.__getitem__,
        cached_passage=builder.passage_embeddings.__getitem__,
    )
    queries, weights = layer2_attention(passage, graph, features, ckpt.gnn, config.fusion_mode)
    positives = {q for q in queries if passage in corpus.positives(q)}
    frame = attention_dump(queries, weights, positives, corpus.query_ids)
    path = _out(args) / f"attention_{args.passage}.tsv"
    frame.to_csv(path, sep="\t", header=False, index=False, float_format="%.6f")
    share = positive_attention_share(queries, weights, positives)
    logger.info(
        f"Passage {args.passage}: {len(queries)} query neighbours, self-loop weight "
        f"{weights[-1]:.4f}, positive attention share {share:.4f}"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    ckpt = load_checkpoint(_checkpoint_path(args, STAGE1_CKPT))
    config = _checkpoint_config(args, ckpt)
    pipeline = RetrievalPipeline(load_corpus(args.data), config)
    stage = _stage_from(args, pipeline, ckpt)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values needs at least one value")
    frame = pipeline.sweep(stage, args.param, values)
    write_sweep(frame, _out(args) / "sweep.tsv")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 7
    reports = run_gradient_suite(seed=seed, tol=args.tol)
    for name, report in sorted(reports.items()):
        status = "ok" if report.passed else "FAIL"
        print(f"{name}\t{report.max_rel_error:.3e}\t{report.checked}\t{status}")
    return EXIT_OK if all(r.passed for r in reports.values()) else EXIT_NUMERIC


COMMANDS: dict[str, tuple[Callable, str]] = {
    "gen-data": (cmd_gen_data, "Generate a synthetic corpus into --out"),
    "train-dual": (cmd_train_dual, "Fit the cross-encoder, train and mine the stage-1 dual encoder"),
    "mine": (cmd_mine, "Mine hard negatives with a stage-1 checkpoint"),
    "train-joint": (cmd_train_joint, "Jointly train the dual encoder and GNN"),
    "build-index": (cmd_build_index, "Precompute query-interactive passage embeddings"),
    "search": (cmd_search, "Search the index with one query"),
    "eval": (cmd_eval, "Evaluate a query split and write a TREC run"),
    "dump-attn": (cmd_dump_attn, "Dump layer-2 attention of one passage"),
    "sweep": (cmd_sweep, "Sweep k or beta and write sweep.tsv"),
    "grad-check": (cmd_grad_check, "Finite-difference gradient suite"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--out", default=settings.output_dir, help="Output directory")
    common.add_argument("--data", default=settings.data_dir, help="Corpus directory")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="Override one config field. Repeat flag for multiple entries.",
    )
    common.add_argument("--checkpoint", help="Checkpoint to read")
    common.add_argument("--triples", help="Triples TSV to read")
    common.add_argument("--index", help="Index file to read")

    parser = argparse.ArgumentParser(prog="gnn_encoder", description="Desk-scale GNN-encoder dense retrieval.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}

    gen = parsers["gen-data"]
    gen.add_argument("--m", type=int, default=2000)
    gen.add_argument("--n-train", type=int, default=400)
    gen.add_argument("--n-test", type=int, default=100)
    gen.add_argument("--vocab", type=int, default=5000)
    gen.add_argument("--noise", type=float, default=0.2)

    parsers["train-joint"].add_argument("--resume", help="Epoch checkpoint to continue from")
    parsers["search"].add_argument("--query", required=True)
    parsers["search"].add_argument("--top-k", type=int, default=10)
    parsers["eval"].add_argument("--split", choices=["train", "dev", "test"], default="test")
    parsers["eval"].add_argument("--top-k", type=int, default=100)
    parsers["dump-attn"].add_argument("--passage", required=True, help="Passage id")
    parsers["sweep"].add_argument("--param", choices=["k", "beta"], required=True)
    parsers["sweep"].add_argument("--values", required=True, help="Comma-separated values")
    parsers["grad-check"].add_argument("--tol", type=float, default=1e-4)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler, _ = COMMANDS[args.command]
    try:
        return handler(args)
    except (ConfigError, OSError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except NumericError as e:
        logger.error(f"{args.command}: numeric failure: {e}")
        return EXIT_NUMERIC
    except (DataError, CheckpointError, StaleIndexError, GraphError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_DATA
    except GnnEncoderError as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_DATA
    except ValueError as e:
        logger.error(f"{args.command}: invalid argument: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
