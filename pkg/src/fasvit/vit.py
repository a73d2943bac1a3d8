"""Multimodal vision transformer: shared patch tokenizer, class token, pre-norm blocks, head.

Modalities are embedded separately by one shared linear projection and
concatenated along the sequence axis after a single class token::

    [CLS, modality_1 patches (n_p), ..., modality_K patches (n_p)]
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import LayerNorm, Linear, Module, ModuleDict, ModuleList, Parameter, trunc_normal


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    ffn_ratio: int = 4
    num_modalities: int = 1
    in_chans: int = 3
    num_classes: int = 2
    per_modality_pos: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if not 1 <= self.num_modalities <= 3:
            raise ValueError(f"num_modalities must be 1..3, got {self.num_modalities}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @classmethod
    def paper(cls, **kw) -> "ViTConfig":
        """ViT-Base dimensions (224/16, D=768, 12 blocks, 12 heads)."""
        base = dict(image_size=224, patch_size=16, embed_dim=768, depth=12, heads=12)
        base.update(kw)
        return cls(**base)

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid**2

    @property
    def patch_dim(self) -> int:
        return self.in_chans * self.patch_size**2

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TokenLayout:
    """Where each modality's tokens sit in the sequence (class token at index 0)."""

    num_modalities: int
    n_patches: int

    @property
    def length(self) -> int:
        return 1 + self.num_modalities * self.n_patches

    @property
    def grid(self) -> int:
        side = int(round(np.sqrt(self.n_patches)))
        if side * side != self.n_patches:
            raise ValueError(f"{self.n_patches} patches do not form a square grid")
        return side

    def modality_slice(self, k: int) -> slice:
        if not 0 <= k < self.num_modalities:
            raise IndexError(f"modality {k} outside layout with K={self.num_modalities}")
        start = 1 + k * self.n_patches
        return slice(start, start + self.n_patches)


# ---------------------------------------------------------------------------
# patch handling
# ---------------------------------------------------------------------------
def align_channels(x: np.ndarray, channels: int = 3) -> np.ndarray:
    """(N,C,H,W) -> (N,channels,H,W): replicate a single channel, zero-pad other short inputs."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"expected (N,C,H,W) input, got shape {x.shape}")
    c = x.shape[1]
    if c == channels:
        return x
    if c == 1:
        return np.repeat(x, channels, axis=1)
    if c < channels:
        pad = np.zeros((x.shape[0], channels - c) + x.shape[2:], dtype=x.dtype)
        return np.concatenate([x, pad], axis=1)
    raise ValueError(f"input has {c} channels, tokenizer expects at most {channels}")


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    """(N,C,H,W) -> (N, n_p, C*patch*patch), patches in raster order, channel-major inside a patch."""
    n, c, h, w = x.shape
    gh, gw = h // patch, w // patch
    x = x.reshape(n, c, gh, patch, gw, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(n, gh * gw, c * patch * patch)


def unpatchify(p: np.ndarray, patch: int, channels: int) -> np.ndarray:
    n, n_p, _ = p.shape
    g = int(round(np.sqrt(n_p)))
    x = p.reshape(n, g, g, channels, patch, patch).transpose(0, 3, 1, 4, 2, 5)
    return x.reshape(n, channels, g * patch, g * patch)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------
class Attention(Module):
    def __init__(self, dim: int, heads: int, rng, dtype=np.float32):
        self.qkv = Linear(dim, 3 * dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        self._heads = heads
        self._scale = (dim // heads) ** -0.5

    def weights(self, x: Tensor) -> Tensor:
        q, k, _ = self._qkv(x)
        return ag.softmax(ag.matmul(q, ag.swapaxes(k, -1, -2)) * self._scale, axis=-1)

    def _qkv(self, x: Tensor):
        n, length, d = x.shape
        h = self._heads
        qkv = self.qkv(x).reshape(n, length, 3, h, d // h).transpose(2, 0, 3, 1, 4)
        return qkv[0], qkv[1], qkv[2]

    def forward(self, x: Tensor) -> Tensor:
        n, length, d = x.shape
        q, k, v = self._qkv(x)
        att = ag.softmax(ag.matmul(q, ag.swapaxes(k, -1, -2)) * self._scale, axis=-1)
        out = ag.matmul(att, v).transpose(0, 2, 1, 3).reshape(n, length, d)
        return self.proj(out)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block with optional parallel adapter branches.

    x <- x + MHSA(LN1(x)) [+ A_mhsa(LN1(x))];  x <- x + FFN(LN2(x)) [+ A_ffn(LN2(x))]
    """

    def __init__(self, dim: int, heads: int, ffn_ratio: int, rng, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = Attention(dim, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, dim * ffn_ratio, rng, dtype)

    def forward(self, x: Tensor, mhsa_adapter=None, ffn_adapter=None, layout: TokenLayout | None = None) -> Tensor:
        h = self.norm1(x)
        branch = self.attn(h)
        if mhsa_adapter is not None:
            branch = branch + mhsa_adapter(h, layout)
        x = x + branch
        h = self.norm2(x)
        branch = self.mlp(h)
        if ffn_adapter is not None:
            branch = branch + ffn_adapter(h, layout)
        return x + branch


class Head(Module):
    def __init__(self, dim: int, num_classes: int, rng, dtype=np.float32):
        self.norm = LayerNorm(dim, dtype=dtype)
        self.fc = Linear(dim, num_classes, rng, dtype=dtype)

    def forward(self, cls_token: Tensor) -> Tensor:
        return self.fc(self.norm(cls_token))


class ViT(Module):
    def __init__(self, cfg: ViTConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = cfg.np_dtype
        self._cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = Linear(cfg.patch_dim, d, rng, dtype=dt)
        self.cls_token = Parameter(trunc_normal(rng, (1, 1, d), dtype=dt))
        pos_rows = 1 + (cfg.num_modalities if cfg.per_modality_pos else 1) * cfg.n_patches
        self.pos_embed = Parameter(trunc_normal(rng, (pos_rows, d), dtype=dt))
        self.blocks = ModuleList(Block(d, cfg.heads, cfg.ffn_ratio, rng, dt) for _ in range(cfg.depth))
        self.head = Head(d, cfg.num_classes, rng, dt)
        self.adapter = ModuleDict()

    @property
    def config(self) -> ViTConfig:
        return self._cfg

    @property
    def has_adapters(self) -> bool:
        return len(self.adapter) > 0

    def layout(self, num_modalities: int | None = None) -> TokenLayout:
        return TokenLayout(num_modalities or self._cfg.num_modalities, self._cfg.n_patches)

    # -- tokenizer ---------------------------------------------------------
    def patch_pos(self, k: int) -> Tensor:
        """Positional embeddings for modality k's patch tokens."""
        n_p = self._cfg.n_patches
        start = 1 + (k * n_p if self._cfg.per_modality_pos else 0)
        return self.pos_embed[start : start + n_p]

    def prepare(self, image: np.ndarray) -> np.ndarray:
        """Validate one modality batch and return its (N, n_p, patch_dim) patches."""
        cfg = self._cfg
        image = np.asarray(image)
        if image.ndim == 3:
            image = image[:, None]
        if image.ndim != 4 or image.shape[2:] != (cfg.image_size, cfg.image_size):
            raise ValueError(
                f"modality input must be (N,C,{cfg.image_size},{cfg.image_size}), got {image.shape}"
            )
        aligned = align_channels(image, cfg.in_chans).astype(cfg.np_dtype, copy=False)
        return patchify(aligned, cfg.patch_size)

    def tokenize(self, inputs) -> Tensor:
        """Per-modality images (list of (N,C,H,W)) -> (N, 1 + K*n_p, D) token sequence."""
        inputs = list(inputs)
        if len(inputs) != self._cfg.num_modalities:
            raise ValueError(f"expected {self._cfg.num_modalities} modality inputs, got {len(inputs)}")
        patches = [self.prepare(x) for x in inputs]
        if len({p.shape[0] for p in patches}) != 1:
            raise ValueError("modality batches differ in size")
        n = patches[0].shape[0]
        cls = ag.broadcast_to(self.cls_token + self.pos_embed[0:1], (n, 1, self._cfg.embed_dim))
        groups = [self.patch_embed(p) + self.patch_pos(k) for k, p in enumerate(patches)]
        return ag.concat([cls] + groups, axis=1)

    # -- forward -----------------------------------------------------------
    def encode(self, tokens: Tensor, layout: TokenLayout | None = None) -> Tensor:
        layout = layout or self.layout()
        for i, blk in enumerate(self.blocks):
            sites = self.adapter[str(i)] if str(i) in self.adapter else None
            mh = sites["mhsa"] if sites is not None and "mhsa" in sites else None
            ff = sites["ffn"] if sites is not None and "ffn" in sites else None
            tokens = blk(tokens, mh, ff, layout)
        return tokens

    def classify(self, tokens: Tensor) -> Tensor:
        return self.head(tokens[:, 0])

    def forward(self, inputs) -> Tensor:
        return self.classify(self.encode(self.tokenize(inputs)))

    def scores(self, inputs, batch_size: int = 64) -> np.ndarray:
        """Live probability (softmax of class 1) per sample, without graph recording."""
        inputs = [np.asarray(x) for x in inputs]
        n = inputs[0].shape[0]
        out = []
        with ag.no_grad():
            for s in range(0, n, batch_size):
                logits = self.forward([x[s : s + batch_size] for x in inputs])
                out.append(ag.softmax(logits, axis=-1).data[:, 1])
        return np.concatenate(out).astype(np.float64)

    def encoder_state(self) -> dict[str, np.ndarray]:
        """Tokenizer and block parameters (what pretraining produces)."""
        return {k: v for k, v in self.state_dict().items() if not k.startswith(("head.", "adapter."))}


def live_score(logits: Tensor) -> np.ndarray:
    return ag.softmax(logits, axis=-1).data[:, 1]


# ---------------------------------------------------------------------------
# freeze policies
# ---------------------------------------------------------------------------
class FreezePolicy(str, enum.Enum):
    ALL_BLOCKS = "ALL_BLOCKS"
    LAST_8_BLOCKS = "LAST_8_BLOCKS"
    LAST_4_BLOCKS = "LAST_4_BLOCKS"
    LAST_BLOCK = "LAST_BLOCK"
    HEAD_ONLY = "HEAD_ONLY"
    ADAPTERS_ONLY = "ADAPTERS_ONLY"


_LAST_N = {
    FreezePolicy.ALL_BLOCKS: None,
    FreezePolicy.LAST_8_BLOCKS: 8,
    FreezePolicy.LAST_4_BLOCKS: 4,
    FreezePolicy.LAST_BLOCK: 1,
    FreezePolicy.HEAD_ONLY: 0,
}


def trainable_prefixes(policy: FreezePolicy, model: ViT) -> tuple[str, ...]:
    policy = FreezePolicy(policy)
    if policy is FreezePolicy.ADAPTERS_ONLY:
        if not model.has_adapters:
            raise ValueError("ADAPTERS_ONLY requested on a model without adapters")
        return ("adapter.", "head.")
    depth = len(model.blocks)
    last = _LAST_N[policy]
    first = 0 if last is None else max(0, depth - last)
    return tuple(f"blocks.{i}." for i in range(first, depth)) + ("head.",)


def apply_freeze(policy: FreezePolicy, model: ViT) -> list[str]:
    """Flag parameters trainable/frozen per policy; return the trainable names."""
    prefixes = trainable_prefixes(policy, model)
    manifest = []
    for name, p in model.named_parameters():
        p.requires_grad = name.startswith(prefixes)
        p.grad = None
        if p.requires_grad:
            manifest.append(name)
    return manifest
