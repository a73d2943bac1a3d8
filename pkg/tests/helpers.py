from fasvit.vit import ViTConfig


def tiny_vit(**kw):
    base = dict(image_size=16, patch_size=4, embed_dim=16, depth=2, heads=2)
    base.update(kw)
    return ViTConfig(**base)
