"""Multimodal face anti-spoofing with adapted vision transformers, in numpy."""

from .adapters import AdapterConfig, AdapterKind, AdapterPosition, attach, parameter_count
from .autograd import Tensor, backward, gradcheck, no_grad
from .checkpoint import Checkpoint, Provenance, load_checkpoint, save_checkpoint
from .config import RunConfig, resolve
from .data import DatasetSplits, MultimodalSample, generate_dataset, generate_splits
from .m2a2e import M2A2E, M2A2EConfig, pretrain
from .metrics import MetricReport, ScoreSet, evaluate
from .vit import FreezePolicy, ViT, ViTConfig, apply_freeze

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "AdapterKind",
    "AdapterPosition",
    "Checkpoint",
    "DatasetSplits",
    "FreezePolicy",
    "M2A2E",
    "M2A2EConfig",
    "MetricReport",
    "MultimodalSample",
    "Provenance",
    "RunConfig",
    "ScoreSet",
    "Tensor",
    "ViT",
    "ViTConfig",
    "apply_freeze",
    "attach",
    "backward",
    "evaluate",
    "generate_dataset",
    "generate_splits",
    "gradcheck",
    "load_checkpoint",
    "no_grad",
    "parameter_count",
    "pretrain",
    "resolve",
    "save_checkpoint",
]
