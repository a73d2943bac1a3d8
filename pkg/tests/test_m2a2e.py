import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasvit import autograd as ag
from fasvit.checkpoint import Provenance, load_encoder
from fasvit.data import generate_dataset, prepare_inputs
from fasvit.imageio import read_pnm
from fasvit.nn import ModuleDict
from fasvit.m2a2e import (
    M2A2E,
    BatchPlan,
    M2A2EConfig,
    decode_multimodal,
    dump_reconstructions,
    encode_visible,
    loss_terms,
    mask_count,
    model_from_checkpoint,
    plan_batch,
    plan_mask,
    pretrain,
    reconstruction_loss,
)
from fasvit.optim import lr_schedule
from fasvit.vit import ViT, ViTConfig

from .helpers import tiny_vit

SMALL = dict(decoder_depth=1, decoder_width=16, decoder_heads=2, batch_size=8, epochs=5, warmup_epochs=1)


def toy_inputs(rng, n=6, size=16):
    return [rng.uniform(size=(n, c, size, size)).astype(np.float32) for c in (3, 3, 1)]


# --- config and plans ----------------------------------------------------------------------
def test_config_validation():
    with pytest.raises(ValueError):
        M2A2EConfig(mask_ratio=1.0)
    with pytest.raises(ValueError):
        M2A2EConfig(modalities=("RGB",))
    with pytest.raises(ValueError):
        M2A2EConfig(decoder_depth=0)
    with pytest.raises(ValueError):
        M2A2EConfig(epochs=5, warmup_epochs=6)


@pytest.mark.parametrize("p,n_p,m", [(0.4, 196, 78), (0.4, 64, 26), (0.5, 5, 3), (0.1, 64, 6), (0.9, 64, 58)])
def test_mask_counts(p, n_p, m):
    assert mask_count(p, n_p) == m
    plan = plan_mask(np.random.default_rng(0), M2A2EConfig(mask_ratio=p), n_p)
    assert plan.masked.size == m and plan.visible.size == n_p - m


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n_p=st.integers(4, 200), p=st.sampled_from([i / 10 for i in range(1, 10)]))
def test_plan_partitions_patches(seed, n_p, p):
    m = mask_count(p, n_p)
    if m in (0, n_p):
        with pytest.raises(ValueError):
            plan_mask(np.random.default_rng(seed), M2A2EConfig(mask_ratio=p), n_p)
        return
    plan = plan_mask(np.random.default_rng(seed), M2A2EConfig(mask_ratio=p), n_p)
    assert sorted(np.concatenate([plan.masked, plan.visible]).tolist()) == list(range(n_p))
    assert 0 <= plan.modality < 3


def test_mask_count_monotone_in_ratio():
    counts = [mask_count(i / 10, 64) for i in range(1, 10)]
    assert counts == sorted(counts)


def test_degenerate_plans_rejected():
    with pytest.raises(ValueError):
        plan_mask(np.random.default_rng(0), M2A2EConfig(mask_ratio=0.1), 4)
    with pytest.raises(ValueError):
        plan_mask(np.random.default_rng(0), M2A2EConfig(), 1)


def test_modality_choice_uniform():
    rng = np.random.default_rng(2024)
    counts = np.bincount([plan_mask(rng, M2A2EConfig(), 16).modality for _ in range(10_000)], minlength=3)
    assert np.all(np.abs(counts - 3333) <= 200)


def test_plans_reproducible():
    a = plan_batch(np.random.default_rng(5), M2A2EConfig(), 64, 8)
    b = plan_batch(np.random.default_rng(5), M2A2EConfig(), 64, 8)
    assert np.array_equal(a.masked, b.masked) and np.array_equal(a.modality, b.modality)


# --- encoder and decoders -------------------------------------------------------------------
def test_latent_ignores_masked_pixels(rng):
    vit = ViT(tiny_vit(), rng)
    x = rng.uniform(size=(2, 3, 16, 16))
    patches = vit.prepare(x)
    plan = plan_batch(rng, M2A2EConfig(), 16, 2)
    base = encode_visible(patches, plan, vit)
    assert base.shape == (2, 1 + plan.visible.shape[1], 16)
    noisy = patches.copy()
    for s in range(2):
        noisy[s, plan.masked[s]] = rng.uniform(size=noisy[s, plan.masked[s]].shape)
    assert np.array_equal(encode_visible(noisy, plan, vit).data, base.data)


def test_token_count_proxy():
    plan = plan_mask(np.random.default_rng(0), M2A2EConfig(mask_ratio=0.4), 64)
    assert 1 + plan.visible.size == 1 + 38


def test_decoders_unshared_and_shapes(rng):
    cfg = M2A2EConfig(**SMALL)
    model = M2A2E(tiny_vit(), cfg, (3, 3, 1), rng)
    x = toy_inputs(rng, n=3)
    plan = plan_batch(rng, cfg, 16, 3)
    preds = model(x, plan)
    assert [p.shape for p in preds] == [(3, 16, 48), (3, 16, 48), (3, 16, 16)]
    model.decoder["RGB"].pred.bias.data += 1.0
    after = model(x, plan)
    assert not np.array_equal(after[0].data, preds[0].data)
    assert np.array_equal(after[1].data, preds[1].data)
    assert np.array_equal(after[2].data, preds[2].data)


def test_missing_decoder_rejected(rng):
    model = M2A2E(tiny_vit(), M2A2EConfig(**SMALL), (3, 3, 1), rng)
    plan = plan_batch(rng, model.config, 16, 2)
    latent = encode_visible(model.encoder.prepare(toy_inputs(rng, n=2)[0]), plan, model.encoder)
    partial = ModuleDict({k: v for k, v in model.decoder.items() if k != "IR"})
    with pytest.raises(ValueError):
        decode_multimodal(latent, plan, partial, model.config.modalities)


# --- loss ---------------------------------------------------------------------------------
def hand_plan():
    return BatchPlan(np.array([0]), np.array([[0, 1]]), np.array([[2, 3]]))


def test_loss_hand_case():
    targets = [np.zeros((1, 4, 3)), np.zeros((1, 4, 2))]
    preds = [np.zeros((1, 4, 3)), np.zeros((1, 4, 2))]
    preds[0][0, :2] += 1.0
    assert float(reconstruction_loss(preds, targets, hand_plan()).data) == 1.0
    preds[0][0, 2:] += 7.0  # visible patches of the masked modality do not count
    assert float(reconstruction_loss(preds, targets, hand_plan()).data) == 1.0


def test_loss_zero_and_homogeneity(rng):
    cfg = M2A2EConfig()
    plan = plan_batch(rng, cfg, 16, 4)
    targets = [rng.normal(size=(4, 16, d)) for d in (12, 12, 4)]
    assert float(reconstruction_loss(targets, targets, plan).data) == 0.0
    err = [rng.normal(size=t.shape) for t in targets]
    one = reconstruction_loss([t + e for t, e in zip(targets, err)], targets, plan).data
    two = reconstruction_loss([t + 2 * e for t, e in zip(targets, err)], targets, plan).data
    assert two == pytest.approx(4 * one, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 5), w=st.sampled_from([0.0, 0.5, 1.0, 2.0]))
def test_loss_decomposition(seed, n, w):
    rng = np.random.default_rng(seed)
    plan = plan_batch(rng, M2A2EConfig(), 16, n)
    preds = [rng.normal(size=(n, 16, d)) for d in (12, 12, 4)]
    targets = [rng.normal(size=(n, 16, d)) for d in (12, 12, 4)]
    terms = loss_terms(preds, targets, plan, w)
    total = float(reconstruction_loss(preds, targets, plan, w).data)
    assert total == pytest.approx(terms["masked"] + terms["cross"], rel=1e-12, abs=1e-15)


def test_empty_masked_set_rejected():
    plan = BatchPlan(np.array([0]), np.zeros((1, 0), dtype=int), np.arange(4)[None])
    with pytest.raises(ValueError):
        reconstruction_loss([np.zeros((1, 4, 2))] * 2, [np.zeros((1, 4, 2))] * 2, plan)


def test_symmetric_loss_only_counts_masked(rng):
    cfg = M2A2EConfig(symmetric=True)
    plan = plan_batch(rng, cfg, 16, 2)
    assert plan.symmetric and plan.masked.shape == (3, 2, 6)
    targets = [np.zeros((2, 16, 4))] * 3
    preds = [np.ones((2, 16, 4))] * 3
    assert float(reconstruction_loss(preds, targets, plan).data) == pytest.approx(3.0)


# --- pretraining ----------------------------------------------------------------------------
def test_schedule_endpoints():
    assert lr_schedule(0, 100, 10, 1.5e-4) == 0.0
    assert lr_schedule(10, 100, 10, 1.5e-4) == pytest.approx(1.5e-4)
    assert lr_schedule(99, 100, 10, 1.5e-4) < 1e-6


@pytest.fixture(scope="module")
def pretrained(tiny_splits):
    inputs = prepare_inputs(tiny_splits.train, ("RGB", "IR", "Depth"))
    cfg = M2A2EConfig(**SMALL)
    vit = tiny_vit(image_size=32, patch_size=8)
    return inputs, cfg, vit, pretrain(inputs, cfg, vit, seed=3, keep_decoders=True)


def test_desk_scale_loss_decreases():
    data = generate_dataset(0, 100, 64, stream=0, prefix="tr")
    inputs = prepare_inputs(data, ("RGB", "IR", "Depth"))
    res = pretrain(inputs, M2A2EConfig.desk(epochs=5, warmup_epochs=2), ViTConfig(), seed=0)
    hist = res.history
    assert len(hist) == 5 and all(b < a for a, b in zip(hist, hist[1:]))


def test_pretrain_reproducible_bitwise(pretrained):
    inputs, cfg, vit, first = pretrained
    again = pretrain(inputs, cfg, vit, seed=3, keep_decoders=True)
    assert again.history == first.history
    assert all(np.array_equal(again.checkpoint.params[k], v) for k, v in first.checkpoint.params.items())


def test_checkpoint_feeds_finetuning(pretrained):
    ckpt = pretrained[3].checkpoint
    assert ckpt.provenance is Provenance.M2A2E
    vit = ViT(tiny_vit(image_size=32, patch_size=8, num_modalities=3), np.random.default_rng(0))
    loaded = load_encoder(vit, ckpt.params)
    assert "patch_embed.weight" in loaded and not any(k.startswith("decoder.") for k in loaded)
    x = [np.random.default_rng(1).uniform(size=(2, c, 32, 32)) for c in (3, 3, 1)]
    assert np.all(np.isfinite(vit(x).data))


def test_missing_modality_rejected(pretrained):
    inputs, cfg, vit, _ = pretrained
    with pytest.raises(ValueError):
        pretrain(inputs[:2], cfg, vit)
    with pytest.raises(ValueError):
        pretrain([inputs[0], inputs[1][:-1], inputs[2]], cfg, vit)


def test_reconstruction_dump(pretrained, tmp_path):
    inputs, _, _, res = pretrained
    model = model_from_checkpoint(res.checkpoint)
    sub = [x[:2] for x in inputs]
    paths = dump_reconstructions(model, sub, ["a", "b"], tmp_path)
    assert len(paths) == 2 * 3 * 3
    assert (tmp_path / "a_Depth_recon.pgm").exists() and (tmp_path / "b_RGB_masked.ppm").exists()
    masked = [read_pnm(tmp_path / f"a_{m}_masked.{'pgm' if m == 'Depth' else 'ppm'}") for m in ("RGB", "IR", "Depth")]
    # exactly one modality shows visible content, the other two are uniformly gray
    gray = [np.all(np.abs(img - 128 / 255) < 1e-9) or np.all(np.abs(img - 0.5) < 0.003) for img in masked]
    assert sum(gray) == 2


def test_model_from_checkpoint_needs_decoders(pretrained):
    inputs, cfg, vit, _ = pretrained
    slim = pretrain([x[:8] for x in inputs], M2A2EConfig(**{**SMALL, "epochs": 1}), vit)
    with pytest.raises(ValueError):
        model_from_checkpoint(slim.checkpoint)
