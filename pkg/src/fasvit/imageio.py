"""8-bit binary PGM (P5) / PPM (P6) images and raw float32 dumps.

Pixel values map to [0, 1] by /255 on read and by round(v * 255) on write.
Arrays are channel-first: (H, W) or (1, H, W) for PGM, (3, H, W) for PPM.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _tokens(buf: bytes, count: int):
    """First ``count`` whitespace-separated header tokens (skipping # comments) and the data offset."""
    out, i, n = [], 0, len(buf)
    while len(out) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PNM header")
        out.append(buf[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte precedes the raster


def read_pnm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), off = _tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM magic {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit images are supported (maxval={maxval})")
    c = 1 if magic == b"P5" else 3
    raw = np.frombuffer(buf, dtype=np.uint8, count=w * h * c, offset=off)
    img = raw.reshape(h, w, c).transpose(2, 0, 1).astype(np.float64) / 255.0
    return img[0] if c == 1 else img


def quantize(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pnm(path, img) -> None:
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        magic, hwc = b"P5", quantize(img)[:, :, None]
    elif img.ndim == 3 and img.shape[0] == 3:
        magic, hwc = b"P6", quantize(img).transpose(1, 2, 0)
    else:
        raise ValueError(f"cannot write image of shape {img.shape} as PGM/PPM")
    h, w = hwc.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(hwc).tobytes())


def write_float_dump(path, img) -> None:
    """Raw little-endian float32, channel-first, no header (shape from the sibling PNM)."""
    np.asarray(img, dtype="<f4").tofile(path)


def read_float_dump(path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(shape)
