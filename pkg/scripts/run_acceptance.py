#!/usr/bin/env python3
"""End-to-end directional check: GNN-encoder vs the stage-1 dual encoder on synthetic data."""
import argparse
import sys
import time
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pandas as pd  # noqa: E402

from gnn_encoder.models.corpus import SyntheticConfig  # noqa: E402
from gnn_encoder.services.corpus_io import gen_synthetic, load_config  # noqa: E402
from gnn_encoder.services.pipeline import RetrievalPipeline  # noqa: E402
from gnn_encoder.utils.logger import get_logger  # noqa: E402

logger = get_logger(__name__)

SEEDS = (1, 2, 3)
DEFAULT_CONFIG = Path(__file__).parent.parent / "configs" / "acceptance.cfg"
RANDOM_R5 = 5 / 2000
MIN_LIFT = 20.0


def run_seed(seed: int, config_path=None) -> dict:
    """Train stage 1 and the joint model on one synthetic corpus and evaluate both."""
    config = load_config(config_path, seed=str(seed))
    corpus = gen_synthetic(SyntheticConfig(m=2000, n_train=400, n_test=100), seed)
    pipeline = RetrievalPipeline(corpus, config)

    stage = pipeline.train_stage_one()
    baseline = pipeline.baseline(stage).metrics
    joint = pipeline.train_joint(stage)
    index = pipeline.build_index(joint.dual, joint.gnn, stage.cross)
    full = pipeline.evaluate(index, joint.dual, gnn=joint.gnn, cross=stage.cross).metrics
    return {
        "seed": seed,
        "baseline_r@5": baseline.recall[5],
        "gnn_r@5": full.recall[5],
        "baseline_mrr@10": baseline.mrr,
        "gnn_mrr@10": full.mrr,
    }


def main():
    """Run every seed and compare mean R@5."""
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(DEFAULT_CONFIG), help="key=value config file")
    parser.add_argument("--out", default="runs/acceptance.tsv")
    args = parser.parse_args()

    logger.info(f"Starting acceptance run over seeds {SEEDS}")
    started = time.perf_counter()
    try:
        frame = pd.DataFrame([run_seed(seed, args.config) for seed in SEEDS])
    except Exception as e:
        logger.error(f"Acceptance run failed: {e}")
        sys.exit(1)
    elapsed = time.perf_counter() - started

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.out, sep="\t", index=False, float_format="%.6f")
    means = frame.mean(numeric_only=True)
    logger.info(f"Per-seed results:\n{frame.to_string(index=False)}")
    logger.info(
        f"Mean R@5: GNN-encoder {means['gnn_r@5']:.4f}, dual encoder {means['baseline_r@5']:.4f}, "
        f"random {RANDOM_R5:.4f} ({elapsed:.0f}s)"
    )

    checks = {
        "GNN-encoder >= dual encoder": means["gnn_r@5"] >= means["baseline_r@5"],
        "dual encoder >= 20x random": means["baseline_r@5"] >= MIN_LIFT * RANDOM_R5,
        "GNN-encoder >= 20x random": means["gnn_r@5"] >= MIN_LIFT * RANDOM_R5,
    }
    for name, ok in checks.items():
        logger.info(f"  {'PASS' if ok else 'FAIL'}: {name}")
    if not all(checks.values()):
        sys.exit(1)


if __name__ == "__main__":
    main()
