from .compose import (
    CHANNELS,
    STANDARD_RECIPES,
    ComposedInput,
    ModalityInputPolicy,
    compose,
    compose_image,
    parse_recipe,
    recipe_name,
    to_gray,
)
from .maps import (
    DescriptorConfig,
    hog_features,
    hog_line_kernels,
    hog_map,
    lbp_map,
    plgf_map,
    plgf_masks,
)
from .reference import hog_reference, lbp_reference, plgf_reference

__all__ = [
    "CHANNELS",
    "STANDARD_RECIPES",
    "ComposedInput",
    "DescriptorConfig",
    "ModalityInputPolicy",
    "compose",
    "compose_image",
    "hog_features",
    "hog_line_kernels",
    "hog_map",
    "hog_reference",
    "lbp_map",
    "lbp_reference",
    "parse_recipe",
    "plgf_map",
    "plgf_masks",
    "plgf_reference",
    "recipe_name",
    "to_gray",
]
