"""Run configuration: strict JSON sections, layered defaults, and flag precedence.

Layers, lowest to highest: built-in base (desk-scale dims with the reference
optimizer settings, or the full-size reference values under
``paper_defaults``), then an optional ``desk_scale`` overlay, then a config
file, then command-line overrides. Unknown keys are rejected at every layer.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .adapters import AdapterConfig, AdapterKind, AdapterPosition
from .data import MODALITIES
from .descriptors import DescriptorConfig, ModalityInputPolicy, recipe_name
from .m2a2e import M2A2EConfig
from .vit import FreezePolicy, ViTConfig

DATA_ENV = "FASVIT_DATA"


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


def _strict(cls, d: dict, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {unknown}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass(frozen=True)
class ModelSection:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    ffn_ratio: int = 4
    per_modality_pos: bool = False
    init_checkpoint: str | None = None

    def vit(self, num_modalities: int) -> ViTConfig:
        return ViTConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            heads=self.heads,
            ffn_ratio=self.ffn_ratio,
            num_modalities=num_modalities,
            per_modality_pos=self.per_modality_pos,
        )


@dataclass(frozen=True)
class AdapterSection:
    enabled: bool = True
    kind: str = "AMA"
    hidden_dim: int = 16
    position: str = "MHSA_AND_FFN"

    def __post_init__(self):
        AdapterKind(self.kind)
        AdapterPosition(self.position)

    def adapter(self, num_modalities: int) -> AdapterConfig | None:
        if not self.enabled:
            return None
        return AdapterConfig(self.kind, self.hidden_dim, self.position, num_modalities)


@dataclass(frozen=True)
class DescriptorSection:
    lbp_neighbors: int = 8
    hog_orientations: int = 9
    hog_cell: int = 8
    hog_block: int = 2
    plgf_mask_size: int = 5
    policy: dict = field(default_factory=lambda: ModalityInputPolicy().as_dict())

    def __post_init__(self):
        bad = sorted(set(self.policy) - set(MODALITIES))
        if bad:
            raise ValueError(f"policy names unknown modalities {bad}")
        for v in self.policy.values():
            recipe_name(v)

    def descriptor_config(self) -> DescriptorConfig:
        return DescriptorConfig(
            self.lbp_neighbors, self.hog_orientations, self.hog_cell, self.hog_block, self.plgf_mask_size
        )

    def input_policy(self) -> ModalityInputPolicy:
        return ModalityInputPolicy.from_dict(self.policy)


@dataclass(frozen=True)
class PretrainSection:
    enabled: bool = False
    mask_ratio: float = 0.40
    decoder_depth: int = 4
    decoder_width: int = 64
    decoder_heads: int = 4
    epochs: int = 80
    warmup_epochs: int = 8
    batch_size: int = 32
    lr: float = 1.5e-4
    weight_decay: float = 0.05
    cross_weight: float = 1.0
    norm_pix: bool = False
    symmetric: bool = False

    def __post_init__(self):
        self.m2a2e()

    def m2a2e(self) -> M2A2EConfig:
        d = asdict(self)
        d.pop("enabled")
        return M2A2EConfig(**d)


@dataclass(frozen=True)
class FinetuneConfig:
    optimizer: str = "ADAM"
    lr: float = 2e-4
    weight_decay: float = 5e-3
    batch_size: int = 16
    epochs: int = 10
    warmup_epochs: int = 0
    freeze: str = "ADAPTERS_ONLY"
    modalities: tuple = MODALITIES
    patience: int = 5
    select: str = "best"
    clip_norm: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if self.optimizer not in ("ADAM", "ADAMW"):
            raise ValueError(f"optimizer must be ADAM or ADAMW, got {self.optimizer!r}")
        FreezePolicy(self.freeze)
        if not self.modalities or len(set(self.modalities)) != len(self.modalities):
            raise ValueError("modality subset must be non-empty without repeats")
        bad = [m for m in self.modalities if m not in MODALITIES]
        if bad:
            raise ValueError(f"unknown modalities {bad}")
        if self.select not in ("best", "last"):
            raise ValueError("select must be 'best' or 'last'")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")


@dataclass(frozen=True)
class DataSection:
    root: str | None = None
    n_train: int = 100
    n_dev: int = 50
    n_test: int = 50

    def __post_init__(self):
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ValueError("per-class split sizes must be >= 1")


@dataclass(frozen=True)
class MetricsSection:
    policy: str = "eer"
    bpcer_target: float = 0.01
    fpr_target: float = 0.01

    def __post_init__(self):
        if self.policy not in ("eer", "bpcer"):
            raise ValueError("threshold policy must be 'eer' or 'bpcer'")


SECTIONS = {
    "model": ModelSection,
    "adapter": AdapterSection,
    "descriptors": DescriptorSection,
    "pretrain": PretrainSection,
    "finetune": FinetuneConfig,
    "data": DataSection,
    "metrics": MetricsSection,
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    descriptors: DescriptorSection = field(default_factory=DescriptorSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    data: DataSection = field(default_factory=DataSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    seed: int = 0

    def __post_init__(self):
        if self.adapter.enabled and not self.adapter.hidden_dim < self.model.embed_dim:
            raise ConfigError(
                f"adapter hidden_dim {self.adapter.hidden_dim} must be below embed_dim {self.model.embed_dim}"
            )
        if self.finetune.freeze == "ADAPTERS_ONLY" and not self.adapter.enabled:
            raise ConfigError("ADAPTERS_ONLY needs adapters enabled")
        try:
            self.model.vit(len(self.finetune.modalities))
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc

    @property
    def vit(self) -> ViTConfig:
        return self.model.vit(len(self.finetune.modalities))

    @property
    def adapter_config(self) -> AdapterConfig | None:
        return self.adapter.adapter(len(self.finetune.modalities))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["finetune"]["modalities"] = list(self.finetune.modalities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(d) - set(SECTIONS) - {"seed"})
        if unknown:
            raise ConfigError(f"unknown section(s): {unknown}")
        kw = {name: _strict(sec, d.get(name, {}), name) for name, sec in SECTIONS.items()}
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        try:
            return cls(**kw, seed=seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def override(self, **dotted) -> "RunConfig":
        """Copy with ``section__key=value`` (or ``seed=value``) overrides applied."""
        d = self.to_dict()
        for key, value in dotted.items():
            set_dotted(d, key.replace("__", "."), value)
        return RunConfig.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------
PAPER_DEFAULTS = {
    "model": {"image_size": 224, "patch_size": 16, "embed_dim": 768, "depth": 12, "heads": 12},
    "adapter": {"hidden_dim": 64},
    "pretrain": {
        "mask_ratio": 0.40,
        "decoder_depth": 4,
        "decoder_width": 512,
        "decoder_heads": 16,
        "epochs": 400,
        "warmup_epochs": 40,
        "batch_size": 64,
        "lr": 1.5e-4,
        "weight_decay": 0.05,
    },
    "finetune": {"optimizer": "ADAM", "lr": 2e-4, "weight_decay": 5e-3, "batch_size": 16, "epochs": 30},
}

DESK_SCALE = {
    "model": {"image_size": 64, "patch_size": 8, "embed_dim": 64, "depth": 2, "heads": 4},
    "adapter": {"hidden_dim": 16},
    "pretrain": {"decoder_width": 64, "decoder_heads": 4, "epochs": 80, "warmup_epochs": 8, "batch_size": 32},
    "finetune": {"epochs": 10},
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "policy":
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    if parts[0] not in SECTIONS and parts != ["seed"]:
        raise ConfigError(f"unknown config key {key!r}")
    cur = d
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"{key!r} does not address a section")
    cur[parts[-1]] = value


def parse_value(text: str):
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_file(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    RunConfig.from_dict(deep_merge(RunConfig().to_dict(), d))
    return d


def base_layer(paper_defaults: bool = False, desk_scale: bool = False) -> dict:
    base = deep_merge(RunConfig().to_dict(), PAPER_DEFAULTS)
    if desk_scale or not paper_defaults:
        base = deep_merge(base, DESK_SCALE)
    return base


def resolve(
    file: dict | None = None,
    flags: dict | None = None,
    paper_defaults: bool = False,
    desk_scale: bool = False,
) -> RunConfig:
    """flags > file > base. ``flags`` maps dotted keys to values."""
    d = base_layer(paper_defaults, desk_scale)
    if d["data"]["root"] is None and os.environ.get(DATA_ENV):
        d["data"]["root"] = os.environ[DATA_ENV]
    if file:
        d = deep_merge(d, file)
    for key, value in (flags or {}).items():
        set_dotted(d, key, value)
    return RunConfig.from_dict(d)
