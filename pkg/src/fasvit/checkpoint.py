"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes   b"FASVITCK"
    version    uint32    1
    cfg_len    uint32    length of the UTF-8 JSON config block
    cfg        bytes     {"config": {...}, "provenance": "RANDOM|FILE|M2A2E"}
    count      uint32    number of arrays
    per array:
      name_len uint16, name (UTF-8)
      ndim     uint8, dims uint32 * ndim
      data     float32 * prod(dims), row-major
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FASVITCK"
VERSION = 1


class Provenance(str, enum.Enum):
    RANDOM = "RANDOM"
    FILE = "FILE"
    M2A2E = "M2A2E"


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    provenance: Provenance = Provenance.RANDOM
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = json.dumps(
        {"config": ckpt.config, "provenance": Provenance(ckpt.provenance).value, "extra": ckpt.extra},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(ckpt.params)))
        for name, arr in ckpt.params.items():
            arr = np.asarray(arr)
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    header = json.loads(buf[off : off + hlen].decode())
    off += hlen
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
    return Checkpoint(header["config"], params, Provenance(header["provenance"]), header.get("extra", {}))


def resize_pos_embed(pos: np.ndarray, n_patches: int) -> np.ndarray:
    """Bilinearly resize the patch rows of a (1 + n, D) positional table to (1 + n_patches, D)."""
    from scipy.ndimage import zoom

    old = pos.shape[0] - 1
    if old == n_patches:
        return pos
    g_old, g_new = int(round(np.sqrt(old))), int(round(np.sqrt(n_patches)))
    if g_old * g_old != old or g_new * g_new != n_patches:
        raise ValueError("positional tables must cover square grids")
    grid = pos[1:].reshape(g_old, g_old, -1)
    scaled = zoom(grid, (g_new / g_old, g_new / g_old, 1), order=1, mode="nearest", grid_mode=True)
    return np.concatenate([pos[:1], scaled.reshape(n_patches, -1)], axis=0).astype(pos.dtype)


def load_encoder(model, params: dict[str, np.ndarray]) -> list[str]:
    """Initialize tokenizer and blocks of ``model`` from ``params``; head and adapters keep their init.

    Positional tables are resized when the patch grid differs. Returns the
    parameter names that were loaded.
    """
    own = dict(model.named_parameters())
    loaded = []
    for name, arr in params.items():
        if name not in own or name.startswith(("head.", "adapter.")):
            continue
        p = own[name]
        if name == "pos_embed" and arr.shape != p.shape:
            # a shared table is resized to the model grid, then tiled for per-modality tables
            n_p = model.config.n_patches
            arr = resize_pos_embed(arr, n_p)
            if model.config.per_modality_pos:
                arr = np.concatenate([arr[:1]] + [arr[1:]] * model.config.num_modalities, axis=0)
        if arr.shape != p.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} incompatible with model {p.shape}")
        p.data = np.array(arr, dtype=p.dtype)
        loaded.append(name)
    return loaded
