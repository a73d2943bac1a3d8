"""Adaptive multimodal adapter (AMA) and the ablation variants.

All kinds map a (N, 1 + K*n_p, D) token sequence to a branch of the same
shape that the host block adds in parallel to its MHSA and/or FFN output.

Convolutional kinds squeeze channels token-wise (1x1 conv == per-token
linear), fold each modality's tokens back onto its sqrt(n_p) x sqrt(n_p)
grid, convolve with a 3x3 kernel, flatten, and expand back to D. The class
token only passes through the squeeze and the expansion.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Conv2d, Linear, Module, ModuleDict
from .vit import TokenLayout, ViT


class AdapterKind(str, enum.Enum):
    VANILLA_FC = "VANILLA_FC"
    CONV = "CONV"
    MULTIMODAL_CONV = "MULTIMODAL_CONV"
    MULTIMODAL_CONV_HUGE = "MULTIMODAL_CONV_HUGE"
    AMA = "AMA"


class AdapterPosition(str, enum.Enum):
    MHSA = "MHSA"
    FFN = "FFN"
    MHSA_AND_FFN = "MHSA_AND_FFN"

    @property
    def sites(self) -> tuple[str, ...]:
        return {"MHSA": ("mhsa",), "FFN": ("ffn",), "MHSA_AND_FFN": ("mhsa", "ffn")}[self.value]


@dataclass(frozen=True)
class AdapterConfig:
    kind: AdapterKind = AdapterKind.AMA
    hidden_dim: int = 64
    position: AdapterPosition = AdapterPosition.MHSA_AND_FFN
    num_modalities: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", AdapterKind(self.kind))
        object.__setattr__(self, "position", AdapterPosition(self.position))
        if self.num_modalities < 1:
            raise ValueError("num_modalities must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "hidden_dim": self.hidden_dim,
            "position": self.position.value,
            "num_modalities": self.num_modalities,
        }


def parameter_count(kind, dim: int, hidden: int, k: int) -> int:
    """Closed-form parameter count of one adapter instance."""
    kind = AdapterKind(kind)
    fc = dim * hidden + hidden + hidden * dim + dim
    if kind is AdapterKind.VANILLA_FC:
        return fc
    if kind is AdapterKind.CONV or k == 1:
        return fc + 9 * hidden * hidden + hidden
    if kind is AdapterKind.MULTIMODAL_CONV:
        return fc + 9 * hidden * k * hidden + hidden
    if kind is AdapterKind.AMA:
        return fc + 9 * hidden * k * hidden + hidden + hidden * k * k + k
    return fc + 9 * (hidden * k) ** 2 + hidden * k


class Adapter(Module):
    def __init__(self, dim: int, cfg: AdapterConfig, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        if not cfg.hidden_dim < dim:
            raise ValueError(f"adapter hidden dim {cfg.hidden_dim} must be smaller than D={dim}")
        self._cfg = cfg
        k, dh = cfg.num_modalities, cfg.hidden_dim
        kind = cfg.kind
        # K == 1 collapses every convolutional kind onto the unimodal ConvAdapter.
        if kind is not AdapterKind.VANILLA_FC and k == 1:
            kind = AdapterKind.CONV
        self._kind = kind
        self.down = Linear(dim, dh, rng, init="kaiming", dtype=dtype)
        if kind is AdapterKind.CONV:
            self.conv = Conv2d(dh, dh, 3, padding=1, rng=rng, dtype=dtype)
        elif kind in (AdapterKind.MULTIMODAL_CONV, AdapterKind.AMA):
            self.conv = Conv2d(dh * k, dh, 3, padding=1, rng=rng, dtype=dtype)
        elif kind is AdapterKind.MULTIMODAL_CONV_HUGE:
            self.conv = Conv2d(dh * k, dh * k, 3, padding=1, rng=rng, dtype=dtype)
        if kind is AdapterKind.AMA:
            self.ada = Linear(dh * k, k, rng, init="kaiming", dtype=dtype)
        self.up = Linear(dh, dim, rng, init="zeros", dtype=dtype)

    @property
    def config(self) -> AdapterConfig:
        return self._cfg

    @property
    def effective_kind(self) -> AdapterKind:
        return self._kind

    def _check(self, x: Tensor, layout: TokenLayout | None) -> TokenLayout:
        k = self._cfg.num_modalities
        if layout is None:
            n_p, rem = divmod(x.shape[1] - 1, k)
            if rem:
                raise ValueError(f"sequence length {x.shape[1]} does not split into {k} modalities")
            layout = TokenLayout(k, n_p)
        if layout.num_modalities != k:
            raise ValueError(f"adapter built for K={k}, token layout has K={layout.num_modalities}")
        if x.shape[1] != layout.length:
            raise ValueError(f"token length {x.shape[1]} != layout length {layout.length}")
        layout.grid  # raises when n_p is not a perfect square
        return layout

    def _maps(self, h: Tensor, layout: TokenLayout) -> list[Tensor]:
        n, _, dh = h.shape
        g = layout.grid
        return [
            h[:, layout.modality_slice(k)].transpose(0, 2, 1).reshape(n, dh, g, g)
            for k in range(layout.num_modalities)
        ]

    @staticmethod
    def _flatten(m: Tensor) -> Tensor:
        n, c, g, _ = m.shape
        return m.reshape(n, c, g * g).transpose(0, 2, 1)

    def modality_weights(self, x: Tensor, layout: TokenLayout | None = None) -> Tensor | None:
        """Sigmoid weights (N, K) for AMA with K >= 2; None for every other kind."""
        if self._kind is not AdapterKind.AMA:
            return None
        layout = self._check(x, layout)
        h = ag.gelu(self.down(x))
        stacked = ag.concat(self._maps(h, layout), axis=1)
        return ag.sigmoid(self.ada(ag.mean(stacked, axis=(2, 3))))

    def forward(self, x: Tensor, layout: TokenLayout | None = None, weights=None) -> Tensor:
        """Adapter branch output. ``weights`` (N, K) replaces the generated AMA weights."""
        layout = self._check(x, layout)
        h = ag.gelu(self.down(x))
        if self._kind is AdapterKind.VANILLA_FC:
            return self.up(h)
        n, _, dh = h.shape
        k = layout.num_modalities
        maps = self._maps(h, layout)
        if self._kind is AdapterKind.CONV:
            conv = self.conv(ag.concat(maps, axis=0))
            groups = [self._flatten(conv[i * n : (i + 1) * n]) for i in range(k)]
        else:
            stacked = ag.concat(maps, axis=1)
            if self._kind is AdapterKind.MULTIMODAL_CONV_HUGE:
                conv = self.conv(stacked)
                groups = [self._flatten(conv[:, i * dh : (i + 1) * dh]) for i in range(k)]
            else:
                shared = self._flatten(self.conv(stacked))
                if self._kind is AdapterKind.AMA:
                    if weights is None:
                        w = ag.sigmoid(self.ada(ag.mean(stacked, axis=(2, 3))))
                    else:
                        w = ag.as_tensor(np.broadcast_to(weights, (n, k)), dtype=h.dtype)
                    groups = [shared * w[:, i].reshape(n, 1, 1) for i in range(k)]
                else:
                    groups = [shared] * k
        seq = ag.concat([h[:, 0:1]] + groups, axis=1)
        return ag.gelu(self.up(seq))


def attach(model: ViT, cfg: AdapterConfig, rng: np.random.Generator | None = None) -> ViT:
    """Add one adapter per block per attachment site, registered under ``adapter.<block>.<site>``."""
    if model.has_adapters:
        raise ValueError("model already has adapters attached")
    if cfg.num_modalities != model.config.num_modalities:
        raise ValueError(
            f"adapter K={cfg.num_modalities} disagrees with model K={model.config.num_modalities}"
        )
    rng = rng if rng is not None else np.random.default_rng(0)
    dim, dt = model.config.embed_dim, model.config.np_dtype
    for i in range(len(model.blocks)):
        model.adapter[str(i)] = ModuleDict({site: Adapter(dim, cfg, rng, dt) for site in cfg.position.sites})
    model._adapter_cfg = cfg
    return model


def adapter_instances(model: ViT) -> list[Adapter]:
    return [a for sites in model.adapter.values() for a in sites.values()]
