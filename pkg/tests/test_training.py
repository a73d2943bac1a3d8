import csv

import numpy as np
import pytest

from fasvit.config import ConfigError, FinetuneConfig, RunConfig, load_file, resolve
from fasvit.optim import AdamHyper, AdamState, adam_step, adamw_step, lr_schedule
from fasvit.training import (
    DEFAULT_GRIDS,
    MODALITY_SUBSETS,
    FeatureCache,
    SplitInputs,
    build_model,
    finetune,
    load_run,
    reevaluate,
    run_experiment,
    sweep,
    sweep_configs,
)
from fasvit.vit import ViT

from .helpers import tiny_vit

TINY = {
    "model.image_size": 32,
    "model.patch_size": 8,
    "model.embed_dim": 16,
    "model.heads": 2,
    "model.depth": 1,
    "adapter.hidden_dim": 4,
    "finetune.batch_size": 8,
    "finetune.epochs": 2,
}


def tiny_cfg(**extra):
    return resolve(flags={**TINY, **extra})


# --- optimizer ------------------------------------------------------------------------
def test_zero_gradient_zero_decay_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), AdamHyper(lr=0.1))
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_first_step_is_signed_lr():
    g = np.array([3.0, -0.5, 1e-3])
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": g}, AdamState(), AdamHyper(lr=0.01))
    np.testing.assert_allclose(p["w"], -0.01 * np.sign(g), rtol=1e-4)


def test_adamw_decoupled_decay_alone():
    p = {"w": np.array([2.0, -4.0])}
    adamw_step(p, {"w": np.zeros(2)}, AdamState(), AdamHyper(lr=1.0, weight_decay=0.1))
    np.testing.assert_allclose(p["w"], [1.8, -3.6], rtol=1e-15)


def test_coupled_decay_enters_the_gradient():
    p = {"w": np.array([2.0])}
    adam_step(p, {"w": np.zeros(1)}, AdamState(), AdamHyper(lr=0.1, weight_decay=0.5))
    np.testing.assert_allclose(p["w"], [1.9], rtol=1e-6)


def reference_adam(x0, grad, lr, b1, b2, eps, steps):
    x, m, v = x0.copy(), np.zeros_like(x0), np.zeros_like(x0)
    for t in range(1, steps + 1):
        g = grad(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return x


QUAD_H = np.array([1.0, 2.0, 0.5, 1.5])
QUAD_C = np.array([0.3, -0.2, 0.1, 0.5])


def minimize(steps, lr, **hyper):
    p = {"x": np.zeros(4)}
    st = AdamState()
    for _ in range(steps):
        adam_step(p, {"x": QUAD_H * (p["x"] - QUAD_C)}, st, AdamHyper(lr=lr, **hyper))
    return p["x"]


def test_adam_matches_textbook_recursion():
    got = minimize(50, 0.05)
    ref = reference_adam(np.zeros(4), lambda x: QUAD_H * (x - QUAD_C), 0.05, 0.9, 0.999, 1e-8, 50)
    np.testing.assert_allclose(got, ref, rtol=1e-13, atol=1e-15)


def test_adam_converges_on_quadratic_in_100_steps():
    assert np.max(np.abs(minimize(100, 0.05, beta1=0.5) - QUAD_C)) <= 1e-6


def test_adam_default_betas_converge_on_quadratic():
    # heavy-ball momentum 0.9 contracts at best by sqrt(0.9) per step, so this needs more than 100
    assert np.max(np.abs(minimize(300, 0.06) - QUAD_C)) <= 1e-6


def test_lr_schedule_shape():
    lrs = [lr_schedule(s, 50, 10, 1.0) for s in range(51)]
    assert lrs[0] == 0.0 and lrs[10] == 1.0 and lrs[50] == 0.0
    assert lrs[:11] == sorted(lrs[:11]) and lrs[10:] == sorted(lrs[10:], reverse=True)
    with pytest.raises(ValueError):
        lr_schedule(0, 5, 6, 1.0)
    with pytest.raises(ValueError):
        lr_schedule(7, 5, 0, 1.0)


# --- finetune -----------------------------------------------------------------------------
def separable_split(seed, n=64):
    rng = np.random.default_rng(seed)
    y = np.array([1] * n + [0] * n)
    level = np.where(y[:, None, None, None] == 1, 0.8, 0.2)
    x = (level + rng.normal(0, 0.05, size=(2 * n, 3, 16, 16))).astype(np.float32)
    return SplitInputs([f"{seed}_{i}" for i in range(2 * n)], [x], y)


def test_head_only_converges_on_separable_inputs():
    tr, dv, te = separable_split(0), separable_split(1), separable_split(2)
    model = ViT(tiny_vit(), np.random.default_rng(0))
    cfg = FinetuneConfig(lr=0.1, epochs=10, batch_size=4, freeze="HEAD_ONLY", modalities=("RGB",), select="last")
    res = finetune(model, tr, dv, te, cfg)
    assert len(res.train_loss) <= 10 and res.train_loss[-1] < 0.1
    assert res.report.acer == 0.0


def test_zero_lr_keeps_loss_and_weights():
    tr, dv, te = (separable_split(s, 8) for s in range(3))
    model = ViT(tiny_vit(), np.random.default_rng(0))
    before = model.state_dict()
    cfg = FinetuneConfig(lr=0.0, epochs=3, batch_size=4, freeze="ALL_BLOCKS", modalities=("RGB",), patience=5)
    res = finetune(model, tr, dv, te, cfg)
    assert res.train_loss == pytest.approx([res.train_loss[0]] * 3, rel=1e-6)
    assert all(np.array_equal(v, before[k]) for k, v in model.state_dict().items())


def test_frozen_parameters_unchanged_after_run(tiny_splits):
    cfg = tiny_cfg(**{"finetune.freeze": "ADAPTERS_ONLY"})
    cache = FeatureCache(tiny_splits)
    model, _ = build_model(cfg, cache)
    before = model.state_dict()
    res = finetune(model, *(cache.split(s, cfg) for s in ("train", "dev", "test")), cfg.finetune)
    after = model.state_dict()
    frozen = [k for k in before if k not in res.manifest]
    assert frozen and all(np.array_equal(before[k], after[k]) for k in frozen)
    assert any(not np.array_equal(before[k], after[k]) for k in res.manifest)


def test_finetune_preconditions(tiny_splits):
    tr = separable_split(0, 4)
    model = ViT(tiny_vit(num_modalities=2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        finetune(model, tr, tr, tr, FinetuneConfig(modalities=("RGB", "IR"), freeze="HEAD_ONLY"))
    model = ViT(tiny_vit(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        finetune(model, tr, tr, tr, FinetuneConfig(modalities=("RGB",), freeze="ADAPTERS_ONLY"))


def test_early_stopping_respects_patience():
    tr, dv, te = (separable_split(s, 8) for s in range(3))
    model = ViT(tiny_vit(), np.random.default_rng(0))
    cfg = FinetuneConfig(lr=0.0, epochs=10, batch_size=4, freeze="HEAD_ONLY", modalities=("RGB",), patience=2)
    res = finetune(model, tr, dv, te, cfg)
    assert len(res.dev_acer) == 3 and res.best_epoch == 1


# --- runs and sweeps ---------------------------------------------------------------------
@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, tiny_splits):
    out = tmp_path_factory.mktemp("run")
    rec = run_experiment(tiny_cfg(), tiny_splits, out)
    return out, rec


def test_run_is_deterministic(run_dir, tiny_splits):
    _, rec = run_dir
    again = run_experiment(tiny_cfg(), tiny_splits)
    assert again.train_loss == rec.train_loss and again.dev_acer == rec.dev_acer
    assert again.report == rec.report


def test_run_directory_contents(run_dir):
    out, rec = run_dir
    assert {p.name for p in out.iterdir()} == {
        "config.echo",
        "metrics.csv",
        "scores_dev.csv",
        "scores_test.csv",
        "checkpoint.bin",
    }
    back = load_run(out)
    assert back.train_loss == rec.train_loss and back.report == rec.report
    assert back.provenance == "RANDOM"


def test_reevaluation_matches_saved_report(run_dir):
    out, rec = run_dir
    assert reevaluate(out) == rec.report


def test_config_echo_reproduces_run(run_dir, tiny_splits):
    out, rec = run_dir
    cfg = RunConfig.from_dict(load_file(out / "config.echo"))
    assert run_experiment(cfg, tiny_splits).report == rec.report


def test_grids_cover_ablation_axes():
    assert set(DEFAULT_GRIDS["modality-subset"]) == set(MODALITY_SUBSETS)
    assert len(MODALITY_SUBSETS) == 7
    assert DEFAULT_GRIDS["adapter-dim"] == [16, 32, 64]
    assert DEFAULT_GRIDS["mask-ratio"] == pytest.approx([i / 10 for i in range(1, 10)])
    assert len(DEFAULT_GRIDS["adapter-kind"]) == 5 and len(DEFAULT_GRIDS["adapter-position"]) == 3


def test_invalid_grid_rejected_before_running(tmp_path, tiny_splits):
    with pytest.raises(ConfigError):
        sweep(tiny_cfg(), {"adapter-dim": [4, 16]}, tiny_splits, tmp_path / "s")
    assert not (tmp_path / "s").exists()
    with pytest.raises(ConfigError):
        sweep_configs(tiny_cfg(), {"modality-subset": ["RGB", "Thermal"]})
    with pytest.raises(ConfigError):
        sweep_configs(tiny_cfg(), {"learning-rate": [1]})
    with pytest.raises(ConfigError):
        sweep_configs(tiny_cfg(), {"mask-ratio": [0.01]})


def test_grid_product_and_recipes():
    pts = sweep_configs(tiny_cfg(), {"adapter-kind": ["AMA", "CONV"], "modality-subset": ["RGB", "IR+Depth"]})
    assert len(pts) == 4
    assert pts[3][1].finetune.modalities == ("IR", "Depth") and pts[3][1].adapter.kind == "CONV"
    (_, c), = sweep_configs(tiny_cfg(), {"descriptor-recipe": ["RAW+GRAY_HOG_PLGF+LBP"]})
    assert c.descriptors.policy == {"RGB": "RAW", "IR": "GRAY_HOG_PLGF", "Depth": "LBP"}


def test_one_point_sweep_equals_single_run(tmp_path, run_dir, tiny_splits):
    _, rec = run_dir
    recs, summary = sweep(tiny_cfg(), {"adapter-kind": ["AMA"]}, tiny_splits, tmp_path)
    assert recs[0].report == rec.report and recs[0].train_loss == rec.train_loss
    rows = list(csv.DictReader(open(summary)))
    assert len(rows) == 1 and float(rows[0]["test_acer"]) == rec.report.acer
