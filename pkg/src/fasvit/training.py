"""Supervised finetuning, run records, and ablation sweeps.

Seeds: every run derives its generators from one integer ``seed`` by a
counter scheme, ``default_rng([seed, c])`` with c = 1 for model and adapter
initialization, 2 for pretraining (shuffles and mask plans) and 3 for
finetuning shuffles. Synthetic data uses ``default_rng([seed, split, index])``.
"""

from __future__ import annotations

import csv
import itertools
import json
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .adapters import AdapterKind, AdapterPosition, attach
from .checkpoint import Checkpoint, Provenance, load_checkpoint, load_encoder, save_checkpoint
from .config import ConfigError, FinetuneConfig, MetricsSection, RunConfig
from .data import MODALITIES, DatasetSplits, labels_of, prepare_inputs
from .descriptors import STANDARD_RECIPES, recipe_name
from .m2a2e import mask_count, pretrain
from .metrics import MetricReport, ScoreSet, Split, apcer_bpcer, evaluate, threshold_from_dev
from .optim import Adam, AdamHyper, lr_schedule
from .vit import FreezePolicy, ViT, apply_freeze

__all__ = [
    "FinetuneConfig",
    "SplitInputs",
    "FeatureCache",
    "FinetuneResult",
    "RunRecord",
    "finetune",
    "run_experiment",
    "save_run",
    "load_run",
    "reevaluate",
    "SWEEP_AXES",
    "MODALITY_SUBSETS",
    "sweep_configs",
    "sweep",
]


@dataclass
class SplitInputs:
    ids: list[str]
    inputs: list[np.ndarray]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


class FeatureCache:
    """Composes each (split, modality, recipe) input once and reuses it across runs."""

    def __init__(self, data: DatasetSplits):
        self.data = data
        self._arrays: dict = {}
        self._pretrained: dict = {}

    def split(self, name: str, cfg: RunConfig) -> SplitInputs:
        samples = self.data[name]
        policy = cfg.descriptors.input_policy()
        desc = cfg.descriptors.descriptor_config()
        arrays = []
        for mod in cfg.finetune.modalities:
            key = (name, mod, policy.recipe_for(mod), desc)
            if key not in self._arrays:
                self._arrays[key] = prepare_inputs(samples, [mod], policy, desc)[0]
            arrays.append(self._arrays[key])
        return SplitInputs([s.id for s in samples], arrays, labels_of(samples))

    def pretrained(self, cfg: RunConfig, log=None) -> Checkpoint:
        key = (cfg.pretrain, cfg.model, cfg.descriptors.input_policy(), cfg.descriptors.descriptor_config(), cfg.seed)
        if key not in self._pretrained:
            m2 = cfg.pretrain.m2a2e()
            policy = cfg.descriptors.input_policy()
            inputs = prepare_inputs(self.data.train, m2.modalities, policy, cfg.descriptors.descriptor_config())
            vit = cfg.model.vit(1)
            self._pretrained[key] = pretrain(inputs, m2, vit, seed=cfg.seed, log=log).checkpoint
        return self._pretrained[key]


@dataclass
class FinetuneResult:
    train_loss: list[float]
    dev_acer: list[float]
    best_epoch: int
    scores_dev: ScoreSet
    scores_test: ScoreSet
    report: MetricReport
    manifest: list[str]


def _scoreset(model: ViT, split: SplitInputs, tag: Split) -> ScoreSet:
    return ScoreSet(split.ids, split.labels, model.scores(split.inputs), tag)


def _dev_acer(scores: ScoreSet, metrics: MetricsSection) -> float:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = threshold_from_dev(scores, metrics.policy, metrics.bpcer_target)
    ap, bp = apcer_bpcer(scores, t)
    return (ap + bp) / 2.0


def finetune(
    model: ViT,
    train: SplitInputs,
    dev: SplitInputs,
    test: SplitInputs,
    cfg: FinetuneConfig,
    metrics: MetricsSection = MetricsSection(),
    seed: int = 0,
    log=None,
) -> FinetuneResult:
    """Cross-entropy finetuning of the parameters the freeze policy leaves trainable.

    Dev ACER is measured after every epoch. Training stops after
    ``cfg.patience`` epochs without improvement; the best-dev weights are
    restored unless ``cfg.select == "last"``.
    """
    if len(train.inputs) != model.config.num_modalities:
        raise ValueError(
            f"dataset provides {len(train.inputs)} modalities, model expects {model.config.num_modalities}"
        )
    manifest = apply_freeze(FreezePolicy(cfg.freeze), model)
    if not manifest:
        raise ValueError("freeze policy leaves no trainable parameters")
    named = dict(model.named_parameters())
    params = {n: named[n] for n in manifest}
    hyper = AdamHyper(lr=cfg.lr, weight_decay=cfg.weight_decay, decoupled=cfg.optimizer == "ADAMW")
    opt = Adam(params, hyper, clip_norm=cfg.clip_norm)
    rng = np.random.default_rng([seed, 3])
    n = len(train)
    steps_per_epoch = -(-n // cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch
    train_loss, dev_acer = [], []
    best, best_epoch, best_state = np.inf, 0, None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            opt.zero_grad()
            logits = model([x[idx] for x in train.inputs])
            loss = ag.cross_entropy(logits, train.labels[idx])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            ag.backward(loss)
            lr = lr_schedule(step, total, warmup, cfg.lr) if cfg.optimizer == "ADAMW" else cfg.lr
            opt.step(lr=lr)
            step += 1
            running += float(loss.data) * idx.size
        train_loss.append(running / n)
        acer = _dev_acer(_scoreset(model, dev, Split.DEV), metrics)
        dev_acer.append(acer)
        if log is not None:
            log(f"epoch {epoch}/{cfg.epochs} train_loss {train_loss[-1]:.5f} dev_acer {acer:.4f}")
        if acer < best:
            best, best_epoch = acer, epoch
            best_state = {k: p.data.copy() for k, p in params.items()}
        elif epoch - best_epoch >= cfg.patience:
            break
    if cfg.select == "best" and best_state is not None:
        for k, v in best_state.items():
            params[k].data = v
    else:
        best_epoch = len(train_loss)
    for p in model.parameters():
        p.grad = None
    sd, st = _scoreset(model, dev, Split.DEV), _scoreset(model, test, Split.TEST)
    report = evaluate(st, sd, metrics.policy, metrics.bpcer_target, metrics.fpr_target)
    return FinetuneResult(train_loss, dev_acer, best_epoch, sd, st, report, manifest)


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------
@dataclass
class RunRecord:
    config: dict
    train_loss: list[float]
    dev_acer: list[float]
    report: MetricReport
    seconds: float
    best_epoch: int
    provenance: str
    scores_dev: ScoreSet
    scores_test: ScoreSet
    checkpoint_path: str | None = None
    model: ViT | None = field(default=None, repr=False)


def build_model(cfg: RunConfig, cache: FeatureCache | None = None, log=None) -> tuple[ViT, Provenance]:
    rng = np.random.default_rng([cfg.seed, 1])
    model = ViT(cfg.vit, rng)
    provenance = Provenance.RANDOM
    if cfg.pretrain.enabled:
        if cache is None:
            raise ValueError("pretraining needs the training data")
        load_encoder(model, cache.pretrained(cfg, log).params)
        provenance = Provenance.M2A2E
    elif cfg.model.init_checkpoint:
        ckpt = load_checkpoint(cfg.model.init_checkpoint)
        load_encoder(model, ckpt.params)
        provenance = Provenance.FILE if ckpt.provenance is Provenance.RANDOM else ckpt.provenance
    if cfg.adapter_config is not None:
        attach(model, cfg.adapter_config, rng)
    return model, provenance


def run_experiment(cfg: RunConfig, data, out_dir=None, log=None) -> RunRecord:
    """Build, optionally pretrain, finetune and (when ``out_dir`` is set) save one run."""
    t0 = time.perf_counter()
    cache = data if isinstance(data, FeatureCache) else FeatureCache(data)
    model, provenance = build_model(cfg, cache, log)
    res = finetune(
        model,
        cache.split("train", cfg),
        cache.split("dev", cfg),
        cache.split("test", cfg),
        cfg.finetune,
        cfg.metrics,
        cfg.seed,
        log,
    )
    rec = RunRecord(
        cfg.to_dict(),
        res.train_loss,
        res.dev_acer,
        res.report,
        time.perf_counter() - t0,
        res.best_epoch,
        provenance.value,
        res.scores_dev,
        res.scores_test,
        model=model,
    )
    if out_dir is not None:
        save_run(rec, out_dir)
    return rec


def save_run(rec: RunRecord, out_dir) -> Path:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.echo").write_text(json.dumps(rec.config, indent=2, sort_keys=True) + "\n")
    with open(d / "metrics.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("name", "epoch", "value"))
        for i, (tl, da) in enumerate(zip(rec.train_loss, rec.dev_acer), 1):
            wr.writerow(("train_loss", i, repr(tl)))
            wr.writerow(("dev_acer", i, repr(da)))
        for k, v in rec.report.__dict__.items():
            wr.writerow((f"test_{k}", "", repr(float(v))))
        wr.writerow(("best_epoch", "", rec.best_epoch))
        wr.writerow(("seconds", "", repr(rec.seconds)))
        wr.writerow(("provenance", "", rec.provenance))
    rec.scores_dev.save(d / "scores_dev.csv")
    rec.scores_test.save(d / "scores_test.csv")
    if rec.model is not None:
        ckpt = Checkpoint(
            {"run": rec.config, "vit": rec.model.config.to_dict()},
            rec.model.state_dict(),
            Provenance(rec.provenance),
            {"best_epoch": rec.best_epoch},
        )
        save_checkpoint(d / "checkpoint.bin", ckpt)
        rec.checkpoint_path = str(d / "checkpoint.bin")
    return d


def load_run(run_dir) -> RunRecord:
    d = Path(run_dir)
    cfg = json.loads((d / "config.echo").read_text())
    train_loss, dev_acer, report, extra = [], [], {}, {}
    with open(d / "metrics.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            name, val = row["name"], row["value"]
            if name == "train_loss":
                train_loss.append(float(val))
            elif name == "dev_acer":
                dev_acer.append(float(val))
            elif name.startswith("test_"):
                report[name[5:]] = float(val)
            else:
                extra[name] = val
    ckpt = d / "checkpoint.bin"
    return RunRecord(
        cfg,
        train_loss,
        dev_acer,
        MetricReport(**report),
        float(extra.get("seconds", "nan")),
        int(extra.get("best_epoch", 0)),
        extra.get("provenance", "RANDOM"),
        ScoreSet.load(d / "scores_dev.csv", Split.DEV),
        ScoreSet.load(d / "scores_test.csv", Split.TEST),
        str(ckpt) if ckpt.exists() else None,
    )


def reevaluate(run_dir) -> MetricReport:
    """Recompute the test report from the saved score files and the echoed metrics settings."""
    rec = load_run(run_dir)
    m = MetricsSection(**rec.config["metrics"])
    return evaluate(rec.scores_test, rec.scores_dev, m.policy, m.bpcer_target, m.fpr_target)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------
MODALITY_SUBSETS = ("RGB", "IR", "Depth", "RGB+IR", "RGB+Depth", "IR+Depth", "RGB+IR+Depth")

SWEEP_AXES = {
    "descriptor-recipe": "descriptors.policy",
    "adapter-kind": "adapter.kind",
    "adapter-dim": "adapter.hidden_dim",
    "adapter-position": "adapter.position",
    "mask-ratio": "pretrain.mask_ratio",
    "decoder-depth": "pretrain.decoder_depth",
    "pretrain-epochs": "pretrain.epochs",
    "freeze-policy": "finetune.freeze",
    "modality-subset": "finetune.modalities",
}

DEFAULT_GRIDS = {
    "descriptor-recipe": list(STANDARD_RECIPES),
    "adapter-kind": [k.value for k in AdapterKind],
    "adapter-dim": [16, 32, 64],
    "adapter-position": [p.value for p in AdapterPosition],
    "mask-ratio": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "decoder-depth": [1, 2, 4],
    "pretrain-epochs": [1, 2, 4],
    "freeze-policy": [p.value for p in FreezePolicy],
    "modality-subset": list(MODALITY_SUBSETS),
}


def _apply_axis(d: dict, axis: str, value) -> None:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    try:
        if axis == "descriptor-recipe":
            parts = str(value).split("+")
            if len(parts) == 1:
                d["descriptors"]["policy"] = {m: recipe_name(parts[0]) for m in MODALITIES}
            elif len(parts) == len(MODALITIES):
                d["descriptors"]["policy"] = {m: recipe_name(p) for m, p in zip(MODALITIES, parts)}
            else:
                raise ValueError(f"recipe {value!r}: give one recipe or one per modality (RGB+IR+Depth)")
        elif axis == "modality-subset":
            mods = value.split("+") if isinstance(value, str) else list(value)
            d["finetune"]["modalities"] = mods
        elif axis == "adapter-kind":
            d["adapter"]["kind"] = AdapterKind(str(value).upper()).value
        elif axis == "adapter-position":
            d["adapter"]["position"] = AdapterPosition(str(value).upper()).value
        elif axis == "freeze-policy":
            d["finetune"]["freeze"] = FreezePolicy(str(value).upper()).value
        elif axis == "adapter-dim":
            d["adapter"]["hidden_dim"] = int(value)
        elif axis == "mask-ratio":
            d["pretrain"].update(enabled=True, mask_ratio=float(value))
        elif axis == "decoder-depth":
            d["pretrain"].update(enabled=True, decoder_depth=int(value))
        elif axis == "pretrain-epochs":
            e = int(value)
            d["pretrain"].update(enabled=True, epochs=e, warmup_epochs=min(d["pretrain"]["warmup_epochs"], e))
    except ValueError as exc:
        raise ConfigError(f"axis {axis}: invalid value {value!r} ({exc})") from exc


def sweep_configs(base: RunConfig, axes: dict) -> list[tuple[dict, RunConfig]]:
    """Cartesian grid over ``axes``; every point is validated before returning."""
    if not axes:
        raise ConfigError("sweep needs at least one axis")
    names = list(axes)
    for a in names:
        if a not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {a!r}; choose from {sorted(SWEEP_AXES)}")
        if not axes[a]:
            raise ConfigError(f"axis {a} has an empty grid")
    out = []
    for combo in itertools.product(*(axes[a] for a in names)):
        d = base.to_dict()
        for a, v in zip(names, combo):
            _apply_axis(d, a, v)
        cfg = RunConfig.from_dict(d)
        if cfg.pretrain.enabled:
            n_p = cfg.model.vit(1).n_patches
            m = mask_count(cfg.pretrain.mask_ratio, n_p)
            if m in (0, n_p):
                raise ConfigError(f"mask ratio {cfg.pretrain.mask_ratio} masks {m} of {n_p} patches")
        out.append((dict(zip(names, combo)), cfg))
    return out


SUMMARY_METRICS = ("apcer", "bpcer", "acer", "hter", "eer", "tpr_at_fpr")

_WORKER_CACHE: FeatureCache | None = None


def _worker(job):
    i, cfg, run_dir = job
    rec = run_experiment(cfg, _WORKER_CACHE, run_dir)
    rec.model = None
    return i, rec


def _label(point: dict) -> str:
    raw = "_".join(f"{v}" for v in point.values())
    return "".join(c if c.isalnum() or c in "._-" else "-" for c in raw)


def sweep(base: RunConfig, axes: dict, data, out_dir, jobs: int = 1, log=None) -> tuple[list[RunRecord], Path]:
    """One seeded run per grid point plus ``summary.csv`` under ``out_dir``."""
    global _WORKER_CACHE
    points = sweep_configs(base, axes)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = data if isinstance(data, FeatureCache) else FeatureCache(data)
    jobs_list = [(i, cfg, out_dir / f"run_{i:03d}_{_label(p)}") for i, (p, cfg) in enumerate(points)]
    records: list[RunRecord | None] = [None] * len(points)
    if jobs > 1:
        _WORKER_CACHE = cache
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            for i, rec in pool.map(_worker, jobs_list):
                records[i] = rec
        _WORKER_CACHE = None
    else:
        for i, cfg, run_dir in jobs_list:
            if log is not None:
                log(f"[{i + 1}/{len(points)}] {points[i][0]}")
            rec = run_experiment(cfg, cache, run_dir)
            rec.model = None
            records[i] = rec
    summary = out_dir / "summary.csv"
    with open(summary, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("run", *axes, "best_epoch", "best_dev_acer", *(f"test_{m}" for m in SUMMARY_METRICS), "run_dir"))
        for (i, _, run_dir), (point, _), rec in zip(jobs_list, points, records):
            rep = rec.report
            wr.writerow(
                (
                    i,
                    *point.values(),
                    rec.best_epoch,
                    repr(min(rec.dev_acer)),
                    *(repr(getattr(rep, m)) for m in SUMMARY_METRICS),
                    run_dir.name,
                )
            )
    return records, summary
