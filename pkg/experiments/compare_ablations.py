"""
Compare ablation modes of the GNN-encoder on one synthetic corpus.

Stage 1 is trained once and shared; every mode reruns joint training,
index build and evaluation from the same stage-1 model.
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import pandas as pd  # noqa: E402

from gnn_encoder.models.corpus import SyntheticConfig  # noqa: E402
from gnn_encoder.services.corpus_io import gen_synthetic, load_config  # noqa: E402
from gnn_encoder.services.pipeline import RetrievalPipeline  # noqa: E402

MODES = {
    "full (gate + MGT)": {},
    "w/o GNN": {"fusion": "identity"},
    "w/o MGT (drop edges)": {"mgt_mode": "drop_edges"},
    "no masking (leaky)": {"mgt_mode": "none"},
    "constant alpha=0.2": {"fusion": "constant_alpha", "alpha": 0.2},
    "w/o edge features": {"edge_features": False},
    "one layer": {"one_layer": True},
}


def run_modes(pipeline: RetrievalPipeline) -> pd.DataFrame:
    stage = pipeline.train_stage_one()
    rows = [{"mode": "stage-1 dual encoder", **pipeline.baseline(stage).metrics.as_row()}]
    for name, updates in MODES.items():
        print(f"\n🔧 Training mode: {name}")
        variant = pipeline.with_config(**updates)
        result = variant.train_joint(stage)
        index = variant.build_index(result.dual, result.gnn, stage.cross)
        metrics = variant.evaluate(index, result.dual, gnn=result.gnn, cross=stage.cross).metrics
        rows.append({"mode": name, **metrics.as_row()})
    return pd.DataFrame(rows)


def print_table(frame: pd.DataFrame):
    """Print comparison table"""
    print("\n" + "=" * 80)
    print("📊 COMPARISON: ablation modes")
    print("=" * 80)
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print("=" * 80)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--m", type=int, default=500)
    parser.add_argument("--n-train", type=int, default=120)
    parser.add_argument("--n-test", type=int, default=40)
    parser.add_argument("--out", default="experiments/ablation_results.tsv")
    args = parser.parse_args()

    corpus = gen_synthetic(
        SyntheticConfig(m=args.m, n_train=args.n_train, n_test=args.n_test), args.seed
    )
    pipeline = RetrievalPipeline(corpus, load_config(args.config, seed=str(args.seed)))
    frame = run_modes(pipeline)
    print_table(frame)
    frame.to_csv(args.out, sep="\t", index=False, float_format="%.6f")
    print(f"\n💾 Results saved to: {args.out}")


if __name__ == "__main__":
    main()
