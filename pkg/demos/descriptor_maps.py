"""Write LBP, HOG, PLGF and composed maps of one synthetic sample as PGM/PPM files.

Run:  python demos/descriptor_maps.py OUT_DIR
"""

import sys
from pathlib import Path

import numpy as np

from fasvit.data import AttackType, make_sample
from fasvit.descriptors import compose_image
from fasvit.imageio import write_pnm

RECIPES = ("GRAY", "LBP", "HOG", "PLGF", "GRAY_HOG_PLGF")


def main(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for attack in (AttackType.NONE, AttackType.REPLAY):
        s = make_sample(np.random.default_rng(3), 64, attack, attack.value.lower())
        write_pnm(out / f"{s.id}_rgb.ppm", s.rgb)
        for src, img in (("rgb", s.rgb), ("ir", s.ir[None])):
            for recipe in RECIPES:
                comp = compose_image(img, recipe)
                ext = "ppm" if comp.channels == 3 else "pgm"
                data = comp.data if comp.channels == 3 else comp.data[0]
                write_pnm(out / f"{s.id}_{src}_{recipe.lower()}.{ext}", data)
    print(f"wrote {len(list(out.iterdir()))} images to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "descriptor_maps")
