"""Synthetic aligned RGB / IR / Depth face samples and the on-disk dataset layout.

Generator contract (all images 8-bit quantized, values in [0, 1]):

* BONA_FIDE - radially decaying face-blob depth, IR correlated with depth,
  skin-toned RGB shaded by the depth with low-frequency texture.
* PRINT - flat depth (plus sensor noise), desaturated RGB, flat IR.
* REPLAY - flat depth, RGB with an additive high-frequency grid (moire
  proxy), dark IR.
* FLAT_MASK - piecewise-constant depth with small steps, IR hotspot anomaly.

Every attack has near-flat depth, so live/spoof is learnable from depth
relief plus RGB texture. Each sample draws from its own RNG stream
``default_rng([seed, stream, index])``.

Dataset directory: ``<root>/{train,dev,test}/manifest.csv`` with columns
``id,rgb_path,ir_path,depth_path,label,attack_type`` plus PPM/PGM files.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .descriptors import DescriptorConfig, ModalityInputPolicy, compose_image
from .imageio import read_pnm, write_pnm

MODALITIES = ("RGB", "IR", "Depth")
SPLITS = ("train", "dev", "test")
MANIFEST_COLUMNS = ("id", "rgb_path", "ir_path", "depth_path", "label", "attack_type")


class Label(enum.IntEnum):
    ATTACK = 0
    BONA_FIDE = 1


class AttackType(str, enum.Enum):
    NONE = "NONE"
    PRINT = "PRINT"
    REPLAY = "REPLAY"
    FLAT_MASK = "FLAT_MASK"


ATTACKS = (AttackType.PRINT, AttackType.REPLAY, AttackType.FLAT_MASK)


@dataclass
class MultimodalSample:
    id: str
    rgb: np.ndarray  # (3, H, W)
    ir: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W)
    label: Label
    attack_type: AttackType

    def __post_init__(self):
        self.label = Label(self.label)
        self.attack_type = AttackType(self.attack_type)
        if (self.label is Label.BONA_FIDE) != (self.attack_type is AttackType.NONE):
            raise ValueError(f"{self.id}: label {self.label.name} inconsistent with {self.attack_type.value}")
        shapes = {self.rgb.shape[1:], self.ir.shape, self.depth.shape}
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3 or len(shapes) != 1:
            raise ValueError(f"{self.id}: modality images must share HxW (rgb {self.rgb.shape})")

    def modality(self, name: str) -> np.ndarray:
        """Channel-first image of one modality."""
        if name == "RGB":
            return self.rgb
        if name == "IR":
            return self.ir[None]
        if name == "Depth":
            return self.depth[None]
        raise KeyError(f"unknown modality {name!r}; choose from {MODALITIES}")


@dataclass
class DatasetSplits:
    train: list[MultimodalSample]
    dev: list[MultimodalSample]
    test: list[MultimodalSample]

    def __getitem__(self, split: str) -> list[MultimodalSample]:
        if split not in SPLITS:
            raise KeyError(split)
        return getattr(self, split)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------
def _q(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _face(rng: np.random.Generator, size: int):
    lin = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(lin, lin, indexing="ij")
    cx, cy = rng.uniform(-0.1, 0.1, size=2)
    rx = rng.uniform(0.45, 0.6)
    ry = rx * rng.uniform(1.1, 1.3)
    r2 = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    blob = np.exp(-1.5 * r2)
    nose = np.exp(-((xx - cx) ** 2 + (yy - cy - 0.05) ** 2) / 0.02)
    alpha = 1.0 / (1.0 + np.exp((r2 - 1.0) * 8.0))
    return xx, yy, blob, nose, alpha


def _face_rgb(rng, xx, yy, blob, alpha) -> np.ndarray:
    skin = np.array([rng.uniform(0.6, 0.9), rng.uniform(0.4, 0.6), rng.uniform(0.3, 0.5)])
    bg = rng.uniform(0.05, 0.35, size=3)
    shading = 0.55 + 0.45 * blob
    texture = np.zeros_like(xx)
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        texture += 0.03 * np.sin(np.pi * (fx * xx + fy * yy) + phase)
    rgb = alpha * skin[:, None, None] * shading + (1 - alpha) * bg[:, None, None] + texture
    return rgb + rng.normal(0, 0.01, size=rgb.shape)


def make_sample(rng: np.random.Generator, size: int, attack: AttackType, sample_id: str) -> MultimodalSample:
    xx, yy, blob, nose, alpha = _face(rng, size)
    rgb = _face_rgb(rng, xx, yy, blob, alpha)
    noise = lambda s: rng.normal(0, s, size=(size, size))  # noqa: E731
    if attack is AttackType.NONE:
        depth = 0.15 + 0.7 * blob + 0.1 * nose + noise(0.01)
        ir = 0.2 + rng.uniform(0.5, 0.65) * blob + noise(0.02)
    elif attack is AttackType.PRINT:
        depth = rng.uniform(0.3, 0.6) + noise(0.005)
        gray = rgb.mean(axis=0, keepdims=True)
        rgb = 0.4 * rgb + 0.6 * gray
        ir = rng.uniform(0.3, 0.45) + 0.05 * alpha + noise(0.02)
    elif attack is AttackType.REPLAY:
        depth = rng.uniform(0.3, 0.6) + noise(0.005)
        period = rng.uniform(2.5, 3.5)
        grid = np.sin(2 * np.pi * np.arange(size) / period)
        rgb = rgb + 0.08 * (grid[None, :, None] + grid[None, None, :])
        ir = rng.uniform(0.05, 0.15) + noise(0.02)
    elif attack is AttackType.FLAT_MASK:
        level = rng.uniform(0.3, 0.6)
        depth = level + 0.03 * (alpha > 0.5) + 0.02 * (yy > rng.uniform(-0.3, 0.3)) + noise(0.003)
        hx, hy = rng.uniform(-0.4, 0.4, size=2)
        spot = np.exp(-((xx - hx) ** 2 + (yy - hy) ** 2) / 0.03)
        ir = 0.25 + 0.3 * alpha + 0.45 * spot + noise(0.02)
    else:
        raise ValueError(attack)
    label = Label.BONA_FIDE if attack is AttackType.NONE else Label.ATTACK
    return MultimodalSample(sample_id, _q(rgb), _q(ir), _q(depth), label, attack)


def generate_dataset(
    seed: int, n: int, image_size: int = 64, stream: int = 0, prefix: str = "s"
) -> list[MultimodalSample]:
    """``n`` bona fide samples and ``n`` attacks (PRINT/REPLAY/FLAT_MASK cycled)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out = []
    for i in range(2 * n):
        rng = np.random.default_rng([seed, stream, i])
        attack = AttackType.NONE if i < n else ATTACKS[(i - n) % len(ATTACKS)]
        out.append(make_sample(rng, image_size, attack, f"{prefix}{stream}_{i:05d}"))
    return out


def generate_splits(seed: int, n_train: int, n_dev: int, n_test: int, image_size: int = 64) -> DatasetSplits:
    """Per-class counts for each split; splits use disjoint RNG streams 0/1/2."""
    return DatasetSplits(
        generate_dataset(seed, n_train, image_size, stream=0, prefix="tr"),
        generate_dataset(seed, n_dev, image_size, stream=1, prefix="dv"),
        generate_dataset(seed, n_test, image_size, stream=2, prefix="te"),
    )


# ---------------------------------------------------------------------------
# model inputs
# ---------------------------------------------------------------------------
def prepare_inputs(
    samples: list[MultimodalSample],
    modalities=MODALITIES,
    policy: ModalityInputPolicy = ModalityInputPolicy(),
    desc_cfg: DescriptorConfig = DescriptorConfig(),
) -> list[np.ndarray]:
    """One (N, C, H, W) float32 array per modality, composed per the input policy."""
    out = []
    for mod in modalities:
        recipe = policy.recipe_for(mod)
        out.append(
            np.stack([compose_image(s.modality(mod), recipe, desc_cfg).data for s in samples]).astype(np.float32)
        )
    return out


def labels_of(samples: list[MultimodalSample]) -> np.ndarray:
    return np.array([int(s.label) for s in samples], dtype=np.int64)


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------
def write_split(root, split: str, samples: list[MultimodalSample]) -> Path:
    d = Path(root) / split
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "manifest.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(MANIFEST_COLUMNS)
        for s in samples:
            paths = (f"{s.id}_rgb.ppm", f"{s.id}_ir.pgm", f"{s.id}_depth.pgm")
            write_pnm(d / paths[0], s.rgb)
            write_pnm(d / paths[1], s.ir)
            write_pnm(d / paths[2], s.depth)
            wr.writerow((s.id, *paths, s.label.name, s.attack_type.value))
    return d


def write_dataset(root, splits: DatasetSplits) -> None:
    for split in SPLITS:
        write_split(root, split, splits[split])


def read_split(root, split: str) -> list[MultimodalSample]:
    d = Path(root) / split
    out = []
    with open(d / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        missing = [c for c in MANIFEST_COLUMNS if not row.get(c)]
        if missing:
            raise ValueError(f"{d / 'manifest.csv'}: sample {row.get('id')!r} lacks {missing}")
        rgb = read_pnm(d / row["rgb_path"])
        ir = read_pnm(d / row["ir_path"])
        depth = read_pnm(d / row["depth_path"])
        if rgb.ndim != 3 or ir.ndim != 2 or depth.ndim != 2:
            raise ValueError(f"sample {row['id']}: expected PPM rgb and PGM ir/depth")
        out.append(MultimodalSample(row["id"], rgb, ir, depth, Label[row["label"]], AttackType(row["attack_type"])))
    return out


def read_dataset(root) -> DatasetSplits:
    return DatasetSplits(*(read_split(root, s) for s in SPLITS))
