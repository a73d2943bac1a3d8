"""Naive per-pixel descriptor implementations used as verification oracles.

These loop over pixels in plain Python and share only the declared
conventions (neighbour order, border replication, bin layout, accumulation
order) with the vectorized maps.
"""

from __future__ import annotations

import numpy as np

from .maps import HOG_EPS, LBP_OFFSETS, PLGF_EPS, DescriptorConfig, check_gray, hog_line_kernels


def _clamp(v: int, hi: int) -> int:
    return 0 if v < 0 else (hi - 1 if v >= hi else v)


def lbp_reference(img, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    img = check_gray(img)
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            center = img[y, x]
            code = 0
            for i, (dy, dx) in enumerate(LBP_OFFSETS):
                if img[_clamp(y + dy, h), _clamp(x + dx, w)] - center >= 0:
                    code += 2**i
            out[y, x] = code / 255.0
    return out


def plgf_reference(img, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    img = check_gray(img)
    h, w = img.shape
    size = cfg.plgf_mask_size
    r = size // 2
    out = np.zeros((h, w))
    two_over_pi = 2.0 / np.pi
    weights = []
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
            weights.append((m, n, c / d2, s / d2))
    for y in range(h):
        for x in range(w):
            sx = 0.0
            sy = 0.0
            for m, n, wx, wy in weights:
                v = img[_clamp(y + m, h), _clamp(x + n, w)]
                sx = sx + wx * v
                sy = sy + wy * v
            den = max(img[y, x], PLGF_EPS)
            fx = sx / den
            fy = sy / den
            out[y, x] = np.arctan(np.sqrt(fx * fx + fy * fy)) * two_over_pi
    return out


def hog_reference(img, cfg: DescriptorConfig = DescriptorConfig()):
    """Returns ``(vector, rendered_map)``."""
    img = check_gray(img)
    h, w = img.shape
    cell, nbins = cfg.hog_cell, cfg.hog_orientations
    ncy, ncx = h // cell, w // cell
    width = 180.0 / nbins

    hist = np.zeros((ncy, ncx, nbins))
    for cy in range(ncy):
        for cx in range(ncx):
            for dy in range(cell):
                for dx in range(cell):
                    y, x = cy * cell + dy, cx * cell + dx
                    gx = img[y, _clamp(x + 1, w)] - img[y, _clamp(x - 1, w)]
                    gy = img[_clamp(y + 1, h), x] - img[_clamp(y - 1, h), x]
                    mag = np.sqrt(gx * gx + gy * gy)
                    ang = np.mod(np.rad2deg(np.arctan2(gy, gx)), 180.0)
                    pos = ang / width
                    base = np.floor(pos)
                    frac = pos - base
                    lo = int(base) % nbins
                    hi = (lo + 1) % nbins
                    hist[cy, cx, lo] += mag * (1.0 - frac)
                    hist[cy, cx, hi] += mag * frac

    by, bx = min(cfg.hog_block, ncy), min(cfg.hog_block, ncx)
    nby, nbx = ncy - by + 1, ncx - bx + 1
    vector = []
    cellsum = np.zeros((ncy, ncx, nbins))
    count = np.zeros((ncy, ncx))
    for byi in range(nby):
        for bxi in range(nbx):
            ss = 0.0
            for oy in range(by):
                for ox in range(bx):
                    for b in range(nbins):
                        v = hist[byi + oy, bxi + ox, b]
                        ss = ss + v * v
            norm = np.sqrt(ss + HOG_EPS * HOG_EPS)
            for oy in range(by):
                for ox in range(bx):
                    for b in range(nbins):
                        val = hist[byi + oy, bxi + ox, b] / norm
                        vector.append(val)
                        cellsum[byi + oy, bxi + ox, b] += val
                    count[byi + oy, bxi + ox] += 1.0

    kernels = hog_line_kernels(nbins, cell)
    out = np.zeros((h, w))
    for cy in range(ncy):
        for cx in range(ncx):
            for b in range(nbins):
                val = cellsum[cy, cx, b] / count[cy, cx]
                for py in range(cell):
                    for px in range(cell):
                        out[cy * cell + py, cx * cell + px] += val * kernels[b, py, px]
    peak = 0.0
    for y in range(h):
        for x in range(w):
            peak = max(peak, out[y, x])
    if peak > 0:
        for y in range(h):
            for x in range(w):
                out[y, x] = out[y, x] / peak
    return np.array(vector), out
