"""``fasvit`` command line.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure
(non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# shared options
# ---------------------------------------------------------------------------
def _add_config_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="JSON run config (sections: model, adapter, descriptors, ...)")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override, e.g. finetune.lr=1e-3")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--paper-defaults", action="store_true", help="full-size reference hyperparameters")
    g.add_argument("--desk-scale", action="store_true", help="shrink dims and epochs for a laptop CPU")
    g.add_argument("--data", help="dataset root (default: $FASVIT_DATA, else synthetic in memory)")
    g.add_argument("--epochs", type=int, help="finetune epochs")


def _resolve(args):
    from .config import ConfigError, load_file, parse_value, resolve

    file = load_file(args.config) if args.config else None
    flags = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags[k.strip()] = parse_value(v.strip())
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.data:
        flags["data.root"] = args.data
    if getattr(args, "epochs", None) is not None:
        flags["finetune.epochs"] = args.epochs
    return resolve(file, flags, args.paper_defaults, args.desk_scale)


def _load_data(cfg):
    from .data import generate_splits, read_dataset

    root = cfg.data.root
    if root:
        if not (Path(root) / "train" / "manifest.csv").exists():
            raise UsageError(f"no dataset at {root} (expected {root}/train/manifest.csv)")
        return read_dataset(root)
    _log("no data root given; generating the synthetic dataset in memory")
    return generate_splits(cfg.seed, cfg.data.n_train, cfg.data.n_dev, cfg.data.n_test, cfg.model.image_size)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    from .data import generate_splits, write_dataset

    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if args.size < 8:
        raise UsageError(f"--size must be >= 8, got {args.size}")
    out = args.out or os.environ.get("FASVIT_DATA")
    if not out:
        raise UsageError("--out not given and $FASVIT_DATA unset")
    n_eval = args.n_eval if args.n_eval is not None else math.ceil(args.n / 2)
    if n_eval < 1:
        raise UsageError("--n-eval must be >= 1")
    splits = generate_splits(args.seed, args.n, n_eval, n_eval, args.size)
    write_dataset(out, splits)
    print(f"wrote {out}: train {2 * args.n}, dev {2 * n_eval}, test {2 * n_eval} samples")
    return EXIT_OK


def cmd_extract(args) -> int:
    from .descriptors import DescriptorConfig, compose_image
    from .imageio import read_pnm, write_float_dump, write_pnm

    img = read_pnm(args.input)
    comp = compose_image(img, args.recipe, DescriptorConfig())
    data = comp.data
    if args.float_dump:
        write_float_dump(args.float_dump, data)
    if args.out:
        view = data
        if view.shape[0] == 2:
            view = np.concatenate([view, np.zeros_like(view[:1])], axis=0)
        elif view.shape[0] > 3:
            view = view[:3]
        write_pnm(args.out, view)
    print(json.dumps({"recipe": comp.recipe, "shape": list(data.shape), **comp.metadata}, default=str))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .checkpoint import save_checkpoint
    from .data import prepare_inputs
    from .m2a2e import pretrain

    cfg = _resolve(args)
    data = _load_data(cfg)
    m2 = cfg.pretrain.m2a2e()
    inputs = prepare_inputs(
        data.train, m2.modalities, cfg.descriptors.input_policy(), cfg.descriptors.descriptor_config()
    )
    res = pretrain(inputs, m2, cfg.model.vit(1), seed=cfg.seed, keep_decoders=args.keep_decoders, log=_log)
    res.checkpoint.extra["policy"] = cfg.descriptors.input_policy().as_dict()
    save_checkpoint(args.out, res.checkpoint)
    print(json.dumps({"checkpoint": args.out, "loss": res.history, "seconds": res.seconds}))
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .training import run_experiment

    cfg = _resolve(args)
    if args.init:
        cfg = cfg.override(model__init_checkpoint=args.init)
    data = _load_data(cfg)
    rec = run_experiment(cfg, data, args.out, log=_log)
    print(json.dumps({"run_dir": args.out, "best_epoch": rec.best_epoch, **rec.report.as_percentages()}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import ScoreSet, Split, apcer_bpcer, evaluate, hter, tpr_at_fpr
    from .training import reevaluate

    if args.run:
        rep = reevaluate(args.run)
    elif args.scores:
        test = ScoreSet.load(args.scores, Split.TEST)
        dev = ScoreSet.load(args.threshold_from, Split.DEV) if args.threshold_from else None
        rep = evaluate(test, dev, args.policy, args.bpcer_target, args.fpr_target)
        if args.threshold is not None:
            ap, bp = apcer_bpcer(test, args.threshold)
            rep.threshold, rep.apcer, rep.bpcer, rep.acer = args.threshold, ap, bp, (ap + bp) / 2
            rep.hter = hter(test, args.threshold)
        rep.tpr_at_fpr = tpr_at_fpr(test, args.fpr_target)
    elif args.checkpoint:
        rep = _evaluate_checkpoint(args)
    else:
        raise UsageError("evaluate needs --scores, --run, or --checkpoint with --data")
    out = rep.as_percentages()
    out["threshold"] = rep.threshold
    print(json.dumps(out))
    return EXIT_OK


def _evaluate_checkpoint(args):
    from .checkpoint import load_checkpoint
    from .config import RunConfig
    from .metrics import ScoreSet, Split, evaluate
    from .training import FeatureCache, build_model

    ckpt = load_checkpoint(args.checkpoint)
    if "run" not in ckpt.config:
        raise UsageError("checkpoint does not come from a finetune run")
    cfg = RunConfig.from_dict(ckpt.config["run"])
    if args.data:
        cfg = cfg.override(data__root=args.data)
    cfg = cfg.override(pretrain__enabled=False, model__init_checkpoint=None)
    model, _ = build_model(cfg)
    model.load_state_dict(ckpt.params)
    cache = FeatureCache(_load_data(cfg))
    sets = {}
    for split, tag in (("dev", Split.DEV), ("test", Split.TEST)):
        s = cache.split(split, cfg)
        sets[split] = ScoreSet(s.ids, s.labels, model.scores(s.inputs), tag)
    return evaluate(sets["test"], sets["dev"], args.policy, args.bpcer_target, args.fpr_target)


def _parse_axes(items, defaults) -> dict:
    from .training import DEFAULT_GRIDS

    axes = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--axis expects NAME=v1,v2,..., got {item!r}")
        name, vals = item.split("=", 1)
        axes[name.strip()] = [v.strip() for v in vals.split(",") if v.strip()]
    for name in defaults:
        if name not in DEFAULT_GRIDS:
            raise UsageError(f"unknown sweep axis {name!r}")
        axes[name] = list(DEFAULT_GRIDS[name])
    return axes


def cmd_sweep(args) -> int:
    from .training import sweep, sweep_configs

    cfg = _resolve(args)
    axes = _parse_axes(args.axis, args.default_grid)
    sweep_configs(cfg, axes)  # validate every grid point before loading data
    data = _load_data(cfg)
    records, summary = sweep(cfg, axes, data, args.out, jobs=args.jobs, log=_log)
    print(json.dumps({"summary": str(summary), "runs": len(records)}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradchecks import CHECKS, run_all

    names = args.only or list(CHECKS)
    bad = [n for n in names if n not in CHECKS]
    if bad:
        raise UsageError(f"unknown check(s) {bad}; choose from {list(CHECKS)}")
    res = run_all(range(args.seeds), args.coords, names)
    worst = max(res.values())
    for name, err in res.items():
        print(f"{name:32s} max rel. error {err:.3e}")
    print(f"{'overall':32s} max rel. error {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


def cmd_dump_recon(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import prepare_inputs, read_split
    from .descriptors import DescriptorConfig, ModalityInputPolicy
    from .m2a2e import dump_reconstructions, model_from_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    root = args.data or os.environ.get("FASVIT_DATA")
    if not root:
        raise UsageError("--data not given and $FASVIT_DATA unset")
    samples = read_split(root, args.split)[: args.count]
    policy = ModalityInputPolicy.from_dict(ckpt.extra.get("policy", {}))
    inputs = prepare_inputs(samples, model.config.modalities, policy, DescriptorConfig())
    paths = dump_reconstructions(model, inputs, [s.id for s in samples], args.out, seed=args.seed or 0)
    print(json.dumps({"written": len(paths), "out": args.out}))
    return EXIT_OK


# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fasvit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic RGB/IR/Depth dataset")
    p.add_argument("--out", help="dataset root (default $FASVIT_DATA)")
    p.add_argument("--n", type=int, default=100, help="train samples per class")
    p.add_argument("--n-eval", type=int, help="dev and test samples per class (default ceil(n/2))")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("extract", help="compose descriptor maps for one image")
    p.add_argument("--in", dest="input", required=True, help="PGM or PPM image")
    p.add_argument("--recipe", required=True, help="e.g. LBP, HOG_PLGF, GRAY_HOG_PLGF")
    p.add_argument("--out", help="PGM/PPM rendering of the composed maps")
    p.add_argument("--float-dump", help="raw little-endian float32 dump of the (C,H,W) maps")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("pretrain", help="masked-autoencoder pretraining; writes an encoder checkpoint")
    _add_config_opts(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--keep-decoders", action="store_true", help="also store decoders (for dump-recon)")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="finetune and evaluate one run")
    _add_config_opts(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--init", help="encoder checkpoint to start from")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("evaluate", help="metrics from score files, a run directory, or a checkpoint")
    p.add_argument("--scores", help="test ScoreSet CSV (id,label,score)")
    p.add_argument("--threshold-from", help="dev ScoreSet CSV fixing the threshold")
    p.add_argument("--threshold", type=float, help="explicit threshold")
    p.add_argument("--run", help="run directory to re-evaluate from its saved scores")
    p.add_argument("--checkpoint", help="finetuned checkpoint.bin")
    p.add_argument("--data", help="dataset root for --checkpoint")
    p.add_argument("--policy", choices=("eer", "bpcer"), default="eer")
    p.add_argument("--bpcer-target", type=float, default=0.01)
    p.add_argument("--fpr-target", type=float, default=0.01)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep", help="ablation grid; one run per point plus summary.csv")
    _add_config_opts(p)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", action="append", default=[], metavar="NAME=V1,V2", help="grid axis (repeatable)")
    p.add_argument("--default-grid", action="append", default=[], metavar="NAME", help="axis with its standard grid")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable module")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--coords", type=int, default=6, help="probed coordinates per tensor")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--only", action="append", help="restrict to named checks")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("dump-recon", help="input / masked / reconstruction images from a pretrain checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint written with --keep-decoders")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dump_recon)
    return ap


def main(argv=None) -> int:
    from .config import ConfigError

    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FloatingPointError as exc:
        print(f"fasvit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"fasvit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
