"""Modality-asymmetric masked autoencoder pretraining.

Per sample one modality i is drawn uniformly and a fraction p of its
patches is hidden. The encoder only sees the visible patches of modality i
(plus the class token). One unshared decoder per modality then predicts
every patch of its modality from that latent. The loss is

    MSE(masked patches of i) + w * sum_{j != i} MSE(all patches of j)

with each term averaged over its own pixel count and the result averaged
over the batch.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import Checkpoint, Provenance
from .imageio import write_pnm
from .nn import LayerNorm, Linear, Module, ModuleDict, ModuleList, Parameter, trunc_normal
from .optim import Adam, AdamHyper, lr_schedule
from .vit import Block, ViT, ViTConfig, patchify, unpatchify


@dataclass(frozen=True)
class M2A2EConfig:
    mask_ratio: float = 0.40
    decoder_depth: int = 4
    decoder_width: int = 512
    decoder_heads: int = 16
    modalities: tuple[str, ...] = ("RGB", "IR", "Depth")
    epochs: int = 400
    warmup_epochs: int = 40
    batch_size: int = 64
    lr: float = 1.5e-4
    weight_decay: float = 0.05
    cross_weight: float = 1.0
    norm_pix: bool = False
    symmetric: bool = False

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.decoder_depth < 1:
            raise ValueError("decoder_depth must be >= 1")
        if len(self.modalities) < 2 or len(set(self.modalities)) != len(self.modalities):
            raise ValueError("need at least two distinct modalities for cross-modal targets")
        if self.decoder_width % self.decoder_heads or self.decoder_width % 4:
            raise ValueError("decoder_width must be divisible by decoder_heads and by 4")
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs exceeds epochs")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    @classmethod
    def desk(cls, **kw) -> "M2A2EConfig":
        base = dict(decoder_width=64, decoder_heads=4, epochs=80, warmup_epochs=8, batch_size=32)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        return d


def mask_count(p: float, n_p: int) -> int:
    """round(p * n_p) with halves rounded up."""
    return int((Decimal(str(p)) * n_p).quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class MaskPlan:
    modality: int
    masked: np.ndarray
    visible: np.ndarray

    @property
    def n_patches(self) -> int:
        return self.masked.size + self.visible.size


def plan_mask(rng: np.random.Generator, cfg: M2A2EConfig, n_p: int) -> MaskPlan:
    if n_p < 2:
        raise ValueError(f"need at least 2 patches, got {n_p}")
    m = mask_count(cfg.mask_ratio, n_p)
    if m in (0, n_p):
        raise ValueError(f"mask ratio {cfg.mask_ratio} on {n_p} patches masks {m}: degenerate plan")
    k = int(rng.integers(len(cfg.modalities)))
    perm = rng.permutation(n_p)
    return MaskPlan(k, np.sort(perm[:m]), np.sort(perm[m:]))


@dataclass(frozen=True)
class BatchPlan:
    """Stacked per-sample plans. ``masked``/``visible`` are (N, m) / (N, n_p - m).

    In symmetric mode they are (K, N, m) / (K, N, n_p - m) and ``modality`` is unused.
    """

    modality: np.ndarray
    masked: np.ndarray
    visible: np.ndarray
    symmetric: bool = False

    @property
    def n_patches(self) -> int:
        return self.masked.shape[-1] + self.visible.shape[-1]

    @classmethod
    def stack(cls, plans: list[MaskPlan]) -> "BatchPlan":
        return cls(
            np.array([p.modality for p in plans], dtype=np.intp),
            np.stack([p.masked for p in plans]),
            np.stack([p.visible for p in plans]),
        )


def plan_batch(rng: np.random.Generator, cfg: M2A2EConfig, n_p: int, n: int) -> BatchPlan:
    if cfg.symmetric:
        plans = [[plan_mask(rng, cfg, n_p) for _ in range(n)] for _ in cfg.modalities]
        return BatchPlan(
            np.full(n, -1, dtype=np.intp),
            np.stack([np.stack([p.masked for p in row]) for row in plans]),
            np.stack([np.stack([p.visible for p in row]) for row in plans]),
            symmetric=True,
        )
    return BatchPlan.stack([plan_mask(rng, cfg, n_p) for _ in range(n)])


def sincos_2d(dim: int, grid: int) -> np.ndarray:
    """Fixed (grid*grid, dim) sine-cosine positions; first half encodes rows, second half columns."""
    if dim % 4:
        raise ValueError("sincos embedding width must be divisible by 4")
    omega = 1.0 / 10000 ** (np.arange(dim // 4, dtype=np.float64) / (dim / 4.0))
    rows, cols = np.meshgrid(np.arange(grid, dtype=np.float64), np.arange(grid, dtype=np.float64), indexing="ij")

    def emb(pos):
        out = pos.reshape(-1, 1) * omega[None]
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    return np.concatenate([emb(rows), emb(cols)], axis=1)


class Decoder(Module):
    """LN -> project to decoder width -> insert mask tokens -> unshuffle -> blocks -> pixel head."""

    def __init__(self, enc_dim: int, width: int, depth: int, heads: int, n_patches: int, out_dim: int, rng, dtype):
        grid = int(round(np.sqrt(n_patches)))
        self.norm_in = LayerNorm(enc_dim, dtype=dtype)
        self.embed = Linear(enc_dim, width, rng, dtype=dtype)
        self.mask_token = Parameter(trunc_normal(rng, (1, 1, width), dtype=dtype))
        self.blocks = ModuleList(Block(width, heads, 4, rng, dtype) for _ in range(depth))
        self.norm = LayerNorm(width, dtype=dtype)
        self.pred = Linear(width, out_dim, rng, dtype=dtype)
        self._pos = sincos_2d(width, grid).astype(dtype)
        self._n_patches = n_patches

    def forward(self, latent: Tensor, visible: np.ndarray, masked: np.ndarray) -> Tensor:
        """``latent`` holds the visible patch tokens (N, n_vis, D) in ``visible`` order."""
        n, n_vis, _ = latent.shape
        if visible.shape != (n, n_vis) or visible.shape[1] + masked.shape[1] != self._n_patches:
            raise ValueError(f"plan {visible.shape}/{masked.shape} does not match latent {latent.shape}")
        x = self.embed(self.norm_in(latent))
        width = x.shape[-1]
        fill = ag.broadcast_to(self.mask_token, (n, masked.shape[1], width))
        seq = ag.concat([x, fill], axis=1)
        restore = np.argsort(np.concatenate([visible, masked], axis=1), axis=1, kind="stable")
        x = ag.take_rows(seq, restore) + self._pos
        for blk in self.blocks:
            x = blk(x)
        return self.pred(self.norm(x))


class M2A2E(Module):
    """Single-modality ViT encoder plus one decoder per modality."""

    def __init__(self, vit_cfg: ViTConfig, cfg: M2A2EConfig, channels, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        channels = tuple(int(c) for c in channels)
        if len(channels) != len(cfg.modalities):
            raise ValueError("one channel count per modality is required")
        if vit_cfg.num_modalities != 1:
            vit_cfg = ViTConfig(**{**vit_cfg.to_dict(), "num_modalities": 1, "per_modality_pos": False})
        self._cfg = cfg
        self._channels = channels
        self.encoder = ViT(vit_cfg, rng)
        p2 = vit_cfg.patch_size**2
        self.decoder = ModuleDict(
            {
                mod: Decoder(
                    vit_cfg.embed_dim,
                    cfg.decoder_width,
                    cfg.decoder_depth,
                    cfg.decoder_heads,
                    vit_cfg.n_patches,
                    p2 * c,
                    rng,
                    vit_cfg.np_dtype,
                )
                for mod, c in zip(cfg.modalities, channels)
            }
        )

    @property
    def config(self) -> M2A2EConfig:
        return self._cfg

    @property
    def channels(self) -> tuple[int, ...]:
        return self._channels

    def trainable(self) -> dict[str, Parameter]:
        return {n: p for n, p in self.named_parameters() if not n.startswith("encoder.head.")}

    def targets(self, inputs) -> list[np.ndarray]:
        """Per-modality pixel targets (N, n_p, p*p*C_k)."""
        ps = self.encoder.config.patch_size
        out = []
        for x in inputs:
            t = patchify(np.asarray(x, dtype=self.encoder.config.np_dtype), ps)
            if self._cfg.norm_pix:
                mu = t.mean(axis=-1, keepdims=True)
                var = t.var(axis=-1, keepdims=True)
                t = (t - mu) / np.sqrt(var + 1e-6)
            out.append(t)
        return out

    def forward(self, inputs, plan: BatchPlan) -> list[Tensor]:
        """Predicted patch grids, one (N, n_p, p*p*C_k) tensor per modality."""
        inputs = list(inputs)
        if len(inputs) != len(self._cfg.modalities):
            raise ValueError(f"expected {len(self._cfg.modalities)} modality inputs, got {len(inputs)}")
        if plan.symmetric:
            return self._forward_symmetric(inputs, plan)
        patches = [self.encoder.prepare(x) for x in inputs]
        n = patches[0].shape[0]
        rows = np.arange(n)
        selected = np.stack(patches)[plan.modality, rows]
        latent = encode_visible(selected, plan, self.encoder)
        return decode_multimodal(latent, plan, self.decoder, self._cfg.modalities)

    def _forward_symmetric(self, inputs, plan: BatchPlan) -> list[Tensor]:
        enc = self.encoder
        n_vis = plan.visible.shape[-1]
        parts = []
        for k, x in enumerate(inputs):
            sub = BatchPlan(plan.modality, plan.masked[k], plan.visible[k])
            parts.append(_embed_visible(enc.prepare(x), sub, enc))
        n = parts[0].shape[0]
        d = enc.config.embed_dim
        cls = ag.broadcast_to(enc.cls_token + enc.pos_embed[0:1], (n, 1, d))
        latent = enc.encode(ag.concat([cls] + parts, axis=1))
        preds = []
        for k, mod in enumerate(self._cfg.modalities):
            seg = latent[:, 1 + k * n_vis : 1 + (k + 1) * n_vis]
            preds.append(self.decoder[mod](seg, plan.visible[k], plan.masked[k]))
        return preds

    def loss(self, inputs, plan: BatchPlan) -> Tensor:
        return reconstruction_loss(self(inputs, plan), self.targets(inputs), plan, self._cfg.cross_weight)


def _embed_visible(patches: np.ndarray, plan: BatchPlan, encoder: ViT) -> Tensor:
    n, n_p, _ = patches.shape
    if plan.visible.shape[0] != n or plan.n_patches != n_p:
        raise ValueError(f"mask plan covers {plan.n_patches} patches, input has {n_p}")
    rows = np.arange(n)[:, None]
    vis = patches[rows, plan.visible]
    pos = encoder.pos_embed[1 : 1 + n_p][plan.visible]
    return encoder.patch_embed(vis) + pos


def encode_visible(patches: np.ndarray, plan: BatchPlan, encoder: ViT) -> Tensor:
    """Encode the visible patches of the selected modality.

    ``patches`` is (N, n_p, patch_dim) for the selected modality of each
    sample. Returns the (N, 1 + n_visible, D) latent, class token first.
    """
    tokens = _embed_visible(np.asarray(patches), plan, encoder)
    n, _, d = tokens.shape
    cls = ag.broadcast_to(encoder.cls_token + encoder.pos_embed[0:1], (n, 1, d))
    return encoder.encode(ag.concat([cls, tokens], axis=1))


def decode_multimodal(latent: Tensor, plan: BatchPlan, decoders: ModuleDict, modalities) -> list[Tensor]:
    missing = [m for m in modalities if m not in decoders]
    if missing:
        raise ValueError(f"no decoder for modalities {missing}")
    body = latent[:, 1:]
    return [decoders[m](body, plan.visible, plan.masked) for m in modalities]


def _weights(plan: BatchPlan, dims, cross_weight: float):
    """Per-modality (N, n_p) weights such that sum(w * sq_err_per_patch) is each sample's loss."""
    n_p = plan.n_patches
    if plan.symmetric:
        out = []
        for k, d in enumerate(dims):
            n, m = plan.masked[k].shape
            w = np.zeros((n, n_p))
            w[np.arange(n)[:, None], plan.masked[k]] = 1.0 / (m * d)
            out.append((w, np.zeros((n, n_p))))
        return out
    n, m = plan.masked.shape
    if m == 0:
        raise ValueError("mask plan has no masked patches")
    out = []
    for k, d in enumerate(dims):
        own = np.zeros((n, n_p))
        sel = plan.modality == k
        own[np.flatnonzero(sel)[:, None], plan.masked[sel]] = 1.0 / (m * d)
        cross = np.where(sel[:, None], 0.0, cross_weight / (n_p * d)) * np.ones((1, n_p))
        out.append((own, cross))
    return out


def reconstruction_loss(preds, targets, plan: BatchPlan, cross_weight: float = 1.0) -> Tensor:
    """Batch mean of the masked-patch term plus the weighted cross-modal terms."""
    preds = [ag.as_tensor(p) for p in preds]
    if len(preds) != len(targets):
        raise ValueError("one prediction per target modality is required")
    for p, t in zip(preds, targets):
        if p.shape != np.shape(t):
            raise ValueError(f"prediction {p.shape} vs target {np.shape(t)}")
    n = preds[0].shape[0]
    total = None
    for p, t, (own, cross) in zip(preds, targets, _weights(plan, [p.shape[-1] for p in preds], cross_weight)):
        w = ((own + cross) / n).astype(p.dtype)
        sq = ag.sum_((p - np.asarray(t, dtype=p.dtype)) ** 2, axis=-1)
        term = ag.sum_(sq * w)
        total = term if total is None else total + term
    return total


def loss_terms(preds, targets, plan: BatchPlan, cross_weight: float = 1.0) -> dict[str, float]:
    """The masked and cross-modal terms evaluated independently in float64."""
    preds = [np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in preds]
    targets = [np.asarray(t, dtype=np.float64) for t in targets]
    n = preds[0].shape[0]
    masked = cross = 0.0
    for s in range(n):
        for k, (p, t) in enumerate(zip(preds, targets)):
            err = (p[s] - t[s]) ** 2
            if plan.symmetric:
                masked += err[plan.masked[k][s]].mean()
            elif plan.modality[s] == k:
                masked += err[plan.masked[s]].mean()
            else:
                cross += cross_weight * err.mean()
    return {"masked": masked / n, "cross": cross / n}


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------
@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    history: list[float] = field(default_factory=list)
    model: M2A2E | None = None
    seconds: float = 0.0


def _ingest(inputs, cfg: M2A2EConfig) -> list[np.ndarray]:
    inputs = [np.asarray(x) for x in inputs]
    if len(inputs) != len(cfg.modalities):
        raise ValueError(f"dataset provides {len(inputs)} modalities, config needs {list(cfg.modalities)}")
    n = {x.shape[0] for x in inputs}
    if len(n) != 1:
        raise ValueError("every sample must carry all configured modalities")
    for mod, x in zip(cfg.modalities, inputs):
        if x.ndim != 4 or not np.isfinite(x).all():
            raise ValueError(f"modality {mod}: expected finite (N,C,H,W) input")
    return inputs


def pretrain(
    inputs,
    cfg: M2A2EConfig,
    vit_cfg: ViTConfig,
    seed: int = 0,
    keep_decoders: bool = False,
    log=None,
) -> PretrainResult:
    """AdamW with per-step linear warmup and cosine decay; returns the encoder checkpoint.

    Initialization draws from ``default_rng([seed, 1])``; shuffling and mask
    plans from ``default_rng([seed, 2])``.
    """
    inputs = _ingest(inputs, cfg)
    t0 = time.perf_counter()
    model = M2A2E(vit_cfg, cfg, [x.shape[1] for x in inputs], np.random.default_rng([seed, 1]))
    rng = np.random.default_rng([seed, 2])
    n = inputs[0].shape[0]
    steps_per_epoch = -(-n // cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch
    opt = Adam(model.trainable(), AdamHyper(lr=cfg.lr, weight_decay=cfg.weight_decay, decoupled=True))
    n_p = model.encoder.config.n_patches
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        running = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            batch = [x[idx] for x in inputs]
            plan = plan_batch(rng, cfg, n_p, idx.size)
            opt.zero_grad()
            loss = model.loss(batch, plan)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite pretraining loss at epoch {epoch + 1}")
            ag.backward(loss)
            opt.step(lr=lr_schedule(step, total, warmup, cfg.lr))
            step += 1
            running += float(loss.data) * idx.size
        history.append(running / n)
        if log is not None:
            log(f"pretrain epoch {epoch + 1}/{cfg.epochs} loss {history[-1]:.6f}")
    params = dict(model.encoder.encoder_state())
    if keep_decoders:
        params.update({k: v for k, v in model.state_dict().items() if k.startswith("decoder.")})
    ckpt = Checkpoint(
        {"vit": model.encoder.config.to_dict(), "m2a2e": cfg.to_dict(), "channels": list(model.channels)},
        params,
        Provenance.M2A2E,
        {"history": history, "seed": seed},
    )
    return PretrainResult(ckpt, history, model, time.perf_counter() - t0)


def model_from_checkpoint(ckpt: Checkpoint) -> M2A2E:
    """Rebuild encoder and decoders from a checkpoint saved with ``keep_decoders``."""
    if not any(k.startswith("decoder.") for k in ckpt.params):
        raise ValueError("checkpoint carries no decoder weights")
    cfg = M2A2EConfig(**ckpt.config["m2a2e"])
    model = M2A2E(ViTConfig(**ckpt.config["vit"]), cfg, ckpt.config["channels"])
    state = {}
    for k, v in ckpt.params.items():
        state[k if k.startswith("decoder.") else f"encoder.{k}"] = v
    model.load_state_dict(state, strict=False)
    return model


def _as_image(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    if x.shape[0] == 1:
        return x[0]
    if x.shape[0] == 2:
        return np.concatenate([x, np.zeros_like(x[:1])], axis=0)
    return x[:3]


def dump_reconstructions(model: M2A2E, inputs, ids, out_dir, seed: int = 0) -> list[Path]:
    """Write ``<id>_<modality>_{input,masked,recon}`` images for every sample and modality.

    ``masked`` shows what the encoder saw: hidden patches of the selected
    modality and every other modality are mid-gray.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = _ingest(inputs, model.config)
    ps = model.encoder.config.patch_size
    n_p = model.encoder.config.n_patches
    rng = np.random.default_rng([seed, 2])
    plan = plan_batch(rng, M2A2EConfig(**{**model.config.to_dict(), "symmetric": False}), n_p, inputs[0].shape[0])
    with ag.no_grad():
        preds = model(inputs, plan)
    written = []
    for s, sid in enumerate(ids):
        for k, mod in enumerate(model.config.modalities):
            x = inputs[k][s : s + 1].astype(np.float64)
            c = x.shape[1]
            patches = patchify(x, ps)
            hidden = patches.copy()
            if plan.modality[s] == k:
                hidden[0, plan.masked[s]] = 0.5
            else:
                hidden[:] = 0.5
            recon = unpatchify(preds[k].data[s : s + 1].astype(np.float64), ps, c)
            imgs = {"input": x[0], "masked": unpatchify(hidden, ps, c)[0], "recon": recon[0]}
            for tag, img in imgs.items():
                img = _as_image(img)
                ext = "ppm" if img.ndim == 3 else "pgm"
                path = out_dir / f"{sid}_{mod}_{tag}.{ext}"
                write_pnm(path, img)
                written.append(path)
    return written
