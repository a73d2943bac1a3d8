"""Finite-difference checks for every differentiable building block.

Each check builds a tiny float64 instance from ``seed``, randomizes all of
its parameters (so zero-initialized projections do not hide gradients),
contracts the output with a fixed random tensor and compares the backward
pass against central differences.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .adapters import Adapter, AdapterConfig, AdapterKind
from .m2a2e import BatchPlan, Decoder, M2A2EConfig, plan_batch, reconstruction_loss
from .nn import Module
from .vit import Block, TokenLayout, ViT, ViTConfig

F64 = np.float64
DIM, HEADS, HIDDEN, K, N_P, BATCH = 8, 2, 4, 2, 4, 2


def _randomize(module: Module, rng) -> dict:
    params = dict(module.named_parameters())
    for p in params.values():
        p.data = rng.normal(0.0, 0.5, size=p.shape).astype(F64)
    return params


def _contract(out, rng):
    r = rng.normal(size=out.shape)
    return lambda t: ag.sum_(t * r)


def _check(build, seed: int, max_coords: int) -> float:
    rng = np.random.default_rng(seed)
    loss_fn, params = build(rng)
    return ag.gradcheck(loss_fn, params, max_coords=max_coords, rng=rng)


def tokenizer(rng):
    vit = ViT(ViTConfig(image_size=8, patch_size=4, embed_dim=DIM, depth=1, heads=HEADS, num_modalities=K, dtype="float64"), rng)
    params = {k: v for k, v in _randomize(vit, rng).items() if not k.startswith(("blocks.", "head."))}
    imgs = [rng.uniform(size=(BATCH, c, 8, 8)) for c in (3, 1)]
    red = _contract(vit.tokenize(imgs), rng)
    return (lambda: red(vit.tokenize(imgs))), params


def block(rng):
    blk = Block(DIM, HEADS, 2, rng, F64)
    params = _randomize(blk, rng)
    x = ag.Tensor(rng.normal(size=(BATCH, 1 + K * N_P, DIM)), requires_grad=True)
    red = _contract(blk(x), rng)
    params["input"] = x
    return (lambda: red(blk(x))), params


def _adapter(kind):
    def build(rng):
        a = Adapter(DIM, AdapterConfig(kind, HIDDEN, num_modalities=K), rng, F64)
        params = _randomize(a, rng)
        x = ag.Tensor(rng.normal(size=(BATCH, 1 + K * N_P, DIM)), requires_grad=True)
        layout = TokenLayout(K, N_P)
        red = _contract(a(x, layout), rng)
        params["input"] = x
        return (lambda: red(a(x, layout))), params

    build.__name__ = f"adapter_{kind.value.lower()}"
    return build


def head(rng):
    vit = ViT(ViTConfig(image_size=8, patch_size=4, embed_dim=DIM, depth=1, heads=HEADS, dtype="float64"), rng)
    params = {k: v for k, v in _randomize(vit, rng).items() if k.startswith("head.")}
    tok = ag.Tensor(rng.normal(size=(BATCH, 5, DIM)))
    labels = rng.integers(0, 2, size=BATCH)
    return (lambda: ag.cross_entropy(vit.classify(tok), labels)), params


def decoder(rng):
    cfg = M2A2EConfig(mask_ratio=0.5, decoder_depth=1, decoder_width=8, decoder_heads=2, modalities=("A", "B"))
    dec = Decoder(DIM, 8, 1, 2, N_P, 3 * 4, rng, F64)
    params = _randomize(dec, rng)
    plan = plan_batch(rng, cfg, N_P, BATCH)
    lat = ag.Tensor(rng.normal(size=(BATCH, plan.visible.shape[1], DIM)), requires_grad=True)
    red = _contract(dec(lat, plan.visible, plan.masked), rng)
    params["latent"] = lat
    return (lambda: red(dec(lat, plan.visible, plan.masked))), params


def losses(rng):
    cfg = M2A2EConfig(mask_ratio=0.5, decoder_width=8, decoder_heads=2, modalities=("A", "B", "C"))
    plan: BatchPlan = plan_batch(rng, cfg, N_P, BATCH)
    dims = (12, 4, 8)
    preds = [ag.Tensor(rng.normal(size=(BATCH, N_P, d)), requires_grad=True) for d in dims]
    targets = [rng.normal(size=(BATCH, N_P, d)) for d in dims]
    logits = ag.Tensor(rng.normal(size=(BATCH + 3, 2)), requires_grad=True)
    labels = rng.integers(0, 2, size=BATCH + 3)
    reg = ag.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    reg_t = rng.normal(size=(3, 5))

    def loss():
        return (
            reconstruction_loss(preds, targets, plan, cross_weight=0.7)
            + ag.cross_entropy(logits, labels)
            + ag.mse(reg, reg_t)
        )

    params = {f"pred{i}": p for i, p in enumerate(preds)}
    params.update(logits=logits, reg=reg)
    return loss, params


CHECKS = {
    "tokenizer": tokenizer,
    "block": block,
    **{f"adapter_{k.value.lower()}": _adapter(k) for k in AdapterKind},
    "head": head,
    "decoder": decoder,
    "losses": losses,
}


def run_all(seeds=range(20), max_coords: int = 6, names=None) -> dict[str, float]:
    """Worst relative error per check over ``seeds``."""
    out = {}
    for name in names or CHECKS:
        out[name] = max(_check(CHECKS[name], int(s), max_coords) for s in seeds)
    return out
