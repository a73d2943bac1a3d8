"""Train a desk-scale ViT with adaptive multimodal adapters on synthetic faces.

Run:  python demos/quickstart.py [--seed 0]
Takes about a minute on one CPU core.
"""

import argparse

from fasvit.config import resolve
from fasvit.data import generate_splits
from fasvit.training import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional run directory")
    args = ap.parse_args()

    cfg = resolve(flags={"seed": args.seed})
    print(f"ViT D={cfg.model.embed_dim} depth={cfg.model.depth}, {cfg.adapter.kind} D'={cfg.adapter.hidden_dim}")
    data = generate_splits(args.seed, cfg.data.n_train, cfg.data.n_dev, cfg.data.n_test, cfg.model.image_size)
    rec = run_experiment(cfg, data, args.out, log=print)
    for k, v in rec.report.as_percentages().items():
        print(f"{k:>12s}  {v:.4g}")


if __name__ == "__main__":
    main()
