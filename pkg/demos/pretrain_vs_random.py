"""Compare masked multimodal pretraining against random initialization.

Both arms share seeds, data and finetuning settings; only the encoder
initialization differs. Prints the dev ACER trace of each arm.

Run:  python demos/pretrain_vs_random.py [--seeds 0,1] [--pretrain-epochs 80]
"""

import argparse

from fasvit.config import resolve
from fasvit.data import generate_splits
from fasvit.training import FeatureCache, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1")
    ap.add_argument("--pretrain-epochs", type=int)
    ap.add_argument("--finetune-epochs", type=int, default=3)
    args = ap.parse_args()

    for seed in map(int, args.seeds.split(",")):
        base = resolve(flags={"seed": seed})
        cache = FeatureCache(generate_splits(seed, base.data.n_train, base.data.n_dev, base.data.n_test))
        for pre in (True, False):
            flags = {"seed": seed, "pretrain.enabled": pre, "finetune.epochs": args.finetune_epochs}
            if args.pretrain_epochs:
                flags["pretrain.epochs"] = args.pretrain_epochs
            rec = run_experiment(resolve(flags=flags), cache)
            arm = "pretrained" if pre else "random"
            print(f"seed {seed} {arm:10s} dev ACER {[round(a, 3) for a in rec.dev_acer]}", flush=True)


if __name__ == "__main__":
    main()
