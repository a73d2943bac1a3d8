"""Vectorized LBP, HOG and PLGF maps on grayscale images in [0, 1].

Accumulation orders are fixed so that results are bitwise identical to the
per-pixel loops in :mod:`fasvit.descriptors.reference`.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

# Clockwise from top-left; neighbour i (0-based) carries weight 2**i.
LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))

PLGF_EPS = 1e-3
HOG_EPS = 1e-6


@dataclass(frozen=True)
class DescriptorConfig:
    lbp_neighbors: int = 8
    hog_orientations: int = 9
    hog_cell: int = 8
    hog_block: int = 2
    plgf_mask_size: int = 5

    def overrides(self) -> dict:
        """Fields that differ from the defaults (recorded in output metadata)."""
        default = DescriptorConfig()
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if getattr(self, f.name) != getattr(default, f.name)
        }


def check_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0.0 or img.max(initial=0.0) > 1.0:
        raise ValueError("grayscale pixels must be finite and lie in [0, 1]")
    return img


def lbp_map(img, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    img = check_gray(img)
    h, w = img.shape
    if h < 3 or w < 3:
        raise ValueError(f"LBP needs at least a 3x3 image, got {h}x{w}")
    if cfg.lbp_neighbors != 8:
        raise ValueError("only the 8-neighbour 3x3 ring is supported")
    p = np.pad(img, 1, mode="edge")
    code = np.zeros((h, w), dtype=np.int64)
    for i, (dy, dx) in enumerate(LBP_OFFSETS):
        nb = p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        code |= ((nb - img) >= 0).astype(np.int64) << i
    return code / 255.0


# ---------------------------------------------------------------------------
# HOG
# ---------------------------------------------------------------------------
def _gradients(img: np.ndarray):
    p = np.pad(img, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return gx, gy


def _orientation_votes(gx, gy, nbins: int):
    mag = np.sqrt(gx * gx + gy * gy)
    ang = np.mod(np.rad2deg(np.arctan2(gy, gx)), 180.0)
    pos = ang / (180.0 / nbins)
    base = np.floor(pos)
    frac = pos - base
    lo = base.astype(np.int64) % nbins
    hi = (lo + 1) % nbins
    return lo, hi, mag * (1.0 - frac), mag * frac


def hog_line_kernels(nbins: int, cell: int) -> np.ndarray:
    """Binary (nbins, cell, cell) stencils: a line through the cell centre along each bin's edge direction."""
    kernels = np.zeros((nbins, cell, cell))
    c = (cell - 1) / 2.0
    t = np.linspace(-c, c, 8 * cell)
    for b in range(nbins):
        phi = np.deg2rad(b * 180.0 / nbins + 90.0)
        ys = np.clip(np.rint(c + t * np.sin(phi)), 0, cell - 1).astype(int)
        xs = np.clip(np.rint(c + t * np.cos(phi)), 0, cell - 1).astype(int)
        kernels[b, ys, xs] = 1.0
    return kernels


def _block_shape(ncy: int, ncx: int, block: int):
    return min(block, ncy), min(block, ncx)


def hog_features(img, cfg: DescriptorConfig = DescriptorConfig()):
    """Dalal-Triggs HOG.

    Returns ``(vector, cell_values)``: the concatenated block-normalized
    feature vector and the per-cell normalized histogram (mean over the
    blocks that contain the cell), shape (ncy, ncx, nbins).
    """
    img = check_gray(img)
    h, w = img.shape
    cell, nbins = cfg.hog_cell, cfg.hog_orientations
    if h < cell or w < cell:
        raise ValueError(f"HOG needs at least one {cell}x{cell} cell, got {h}x{w}")
    ncy, ncx = h // cell, w // cell
    lo, hi, wlo, whi = _orientation_votes(*_gradients(img), nbins)

    hist = np.zeros((ncy, ncx, nbins))
    iy, ix = np.meshgrid(np.arange(ncy), np.arange(ncx), indexing="ij")
    for dy in range(cell):
        for dx in range(cell):
            sl = (slice(dy, ncy * cell, cell), slice(dx, ncx * cell, cell))
            hist[iy, ix, lo[sl]] += wlo[sl]
            hist[iy, ix, hi[sl]] += whi[sl]

    by, bx = _block_shape(ncy, ncx, cfg.hog_block)
    nby, nbx = ncy - by + 1, ncx - bx + 1
    ss = np.zeros((nby, nbx))
    for oy in range(by):
        for ox in range(bx):
            for b in range(nbins):
                v = hist[oy : oy + nby, ox : ox + nbx, b]
                ss = ss + v * v
    norm = np.sqrt(ss + HOG_EPS * HOG_EPS)
    blocks = np.empty((nby, nbx, by, bx, nbins))
    for oy in range(by):
        for ox in range(bx):
            blocks[:, :, oy, ox, :] = hist[oy : oy + nby, ox : ox + nbx, :] / norm[:, :, None]

    cellsum = np.zeros((ncy, ncx, nbins))
    count = np.zeros((ncy, ncx, 1))
    for oy in reversed(range(by)):
        for ox in reversed(range(bx)):
            cellsum[oy : oy + nby, ox : ox + nbx] += blocks[:, :, oy, ox, :]
            count[oy : oy + nby, ox : ox + nbx] += 1.0
    return blocks.reshape(-1), cellsum / count


def hog_map(img, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    """HOG rendered back to an HxW image with the oriented-line visualization, scaled to [0, 1]."""
    img = check_gray(img)
    h, w = img.shape
    _, cells = hog_features(img, cfg)
    cell, nbins = cfg.hog_cell, cfg.hog_orientations
    ncy, ncx = cells.shape[:2]
    kernels = hog_line_kernels(nbins, cell)
    view = np.zeros((ncy, cell, ncx, cell))
    for b in range(nbins):
        view += cells[:, None, :, None, b] * kernels[b][None, :, None, :]
    out = np.zeros((h, w))
    out[: ncy * cell, : ncx * cell] = view.reshape(ncy * cell, ncx * cell)
    peak = out.max()
    if peak > 0:
        out = out / peak
    return out


# ---------------------------------------------------------------------------
# PLGF
# ---------------------------------------------------------------------------
def plgf_masks(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Force masks indexed [m + r, n + r]; m is the row offset, n the column offset.

    At n == 0 the arctan(m/n) angle is taken at its limit: the cosine term
    vanishes and the sine term is sign(m).
    """
    if size < 3 or size % 2 == 0:
        raise ValueError(f"PLGF mask size must be odd and >= 3, got {size}")
    r = size // 2
    mx = np.zeros((size, size))
    my = np.zeros((size, size))
    for m in range(-r, r + 1):
        for n in range(-r, r + 1):
            d2 = m * m + n * n
            if d2 == 0:
                continue
            if n == 0:
                c, s = 0.0, float(np.sign(m))
            else:
                phi = np.arctan(m / n)
                c, s = np.cos(phi), np.sin(phi)
            mx[m + r, n + r] = c / d2
            my[m + r, n + r] = s / d2
    return mx, my


def plgf_map(img, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    img = check_gray(img)
    size = cfg.plgf_mask_size
    mx, my = plgf_masks(size)
    h, w = img.shape
    if h < size or w < size:
        raise ValueError(f"PLGF needs an image of at least {size}x{size}, got {h}x{w}")
    r = size // 2
    p = np.pad(img, r, mode="edge")
    sx = np.zeros((h, w))
    sy = np.zeros((h, w))
    for m in range(-r, r + 1):
        for n in range(-r, r + 1):
            if m == 0 and n == 0:
                continue
            shifted = p[r + m : r + m + h, r + n : r + n + w]
            sx = sx + mx[m + r, n + r] * shifted
            sy = sy + my[m + r, n + r] * shifted
    den = np.maximum(img, PLGF_EPS)
    fx = sx / den
    fy = sy / den
    return np.arctan(np.sqrt(fx * fx + fy * fy)) * (2.0 / np.pi)
