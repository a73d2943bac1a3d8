"""Channel compositions of raw images and descriptor maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maps import DescriptorConfig, hog_map, lbp_map, plgf_map

CHANNELS = ("RAW", "GRAY", "LBP", "HOG", "PLGF")

# Recipes exercised by the input ablations; any "_"-joined channel list is accepted.
STANDARD_RECIPES = ("RAW", "LBP", "HOG", "PLGF", "HOG_PLGF", "LBP_HOG_PLGF", "GRAY_HOG_PLGF")

_MAPS = {"LBP": lbp_map, "HOG": hog_map, "PLGF": plgf_map}


def parse_recipe(recipe) -> tuple[str, ...]:
    if isinstance(recipe, str):
        parts = tuple(p for p in recipe.upper().split("_") if p)
    else:
        parts = tuple(str(p).upper() for p in recipe)
    if not parts:
        raise ValueError("empty descriptor recipe")
    bad = [p for p in parts if p not in CHANNELS]
    if bad:
        raise ValueError(f"unknown recipe channel(s) {bad}; choose from {CHANNELS}")
    return parts


def recipe_name(recipe) -> str:
    return "_".join(parse_recipe(recipe))


def to_gray(image) -> np.ndarray:
    """Grayscale source for descriptors: luma of 3-channel input, or the single channel."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[0] == 1:
        return image[0]
    if image.ndim == 3 and image.shape[0] == 3:
        return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
    raise ValueError(f"expected (H,W), (1,H,W) or (3,H,W) image, got {image.shape}")


@dataclass
class ComposedInput:
    recipe: tuple[str, ...]
    data: np.ndarray  # (C, H, W)
    metadata: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def compose(maps: dict[str, np.ndarray], recipe) -> ComposedInput:
    """Stack precomputed maps in recipe order; each map is (H, W) or (C, H, W)."""
    parts = parse_recipe(recipe)
    stack = []
    for name in parts:
        if name not in maps:
            raise KeyError(f"map {name!r} missing for recipe {recipe_name(parts)}")
        arr = np.asarray(maps[name], dtype=np.float64)
        stack.extend([arr] if arr.ndim == 2 else list(arr))
    hw = {a.shape for a in stack}
    if len(hw) != 1:
        raise ValueError(f"composed channels disagree on HxW: {sorted(hw)}")
    return ComposedInput(parts, np.stack(stack), {"recipe": recipe_name(parts)})


def compose_image(image, recipe, cfg: DescriptorConfig = DescriptorConfig()) -> ComposedInput:
    """Compute the maps a recipe needs from one (C,H,W)/(H,W) image and stack them."""
    parts = parse_recipe(recipe)
    image = np.asarray(image, dtype=np.float64)
    raw = image[None] if image.ndim == 2 else image
    maps: dict[str, np.ndarray] = {"RAW": raw}
    if any(p != "RAW" for p in parts):
        gray = to_gray(image)
        maps["GRAY"] = gray
        for p in parts:
            if p in _MAPS and p not in maps:
                maps[p] = _MAPS[p](gray, cfg)
    out = compose(maps, parts)
    if cfg.overrides():
        out.metadata["descriptor_overrides"] = cfg.overrides()
    return out


@dataclass(frozen=True)
class ModalityInputPolicy:
    """Modality name -> recipe. Defaults: raw RGB and Depth, GRAY_HOG_PLGF for IR."""

    recipes: tuple[tuple[str, str], ...] = (("RGB", "RAW"), ("IR", "GRAY_HOG_PLGF"), ("Depth", "RAW"))

    @classmethod
    def from_dict(cls, mapping: dict[str, str]) -> "ModalityInputPolicy":
        merged = dict(cls().recipes)
        merged.update({k: recipe_name(v) for k, v in mapping.items()})
        return cls(tuple(merged.items()))

    def recipe_for(self, modality: str) -> str:
        return dict(self.recipes)[modality]

    def as_dict(self) -> dict[str, str]:
        return dict(self.recipes)
