"""Vectorized color conversions shared across the library.

Hue is in degrees [0, 360), saturation and value in [0, 1]. Gray is the
plain channel mean; every consumer (LBP, window statistics, features)
must use the same conversion so descriptors stay comparable.
"""

import numpy as np


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Convert an (..., 3) uint8/float RGB array to float64 HSV.

    Returns an (..., 3) array with H in [0, 360), S and V in [0, 1].
    Degenerate pixels follow the usual conventions: S = 0 when V = 0,
    H = 0 when S = 0.
    """
    arr = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    maxc = np.max(arr, axis=-1)
    minc = np.min(arr, axis=-1)
    delta = maxc - minc

    h = np.zeros_like(maxc)
    nz = delta > 0
    # piecewise hue by which channel attains the max
    rmax = nz & (maxc == r)
    gmax = nz & (maxc == g) & ~rmax
    bmax = nz & ~rmax & ~gmax
    with np.errstate(invalid="ignore", divide="ignore"):
        h[rmax] = (60.0 * (g[rmax] - b[rmax]) / delta[rmax]) % 360.0
        h[gmax] = 60.0 * (b[gmax] - r[gmax]) / delta[gmax] + 120.0
        h[bmax] = 60.0 * (r[bmax] - g[bmax]) / delta[bmax] + 240.0
    h = np.where(h >= 360.0, h - 360.0, h)

    s = np.zeros_like(maxc)
    vpos = maxc > 0
    s[vpos] = delta[vpos] / maxc[vpos]
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`; returns uint8 RGB."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 360.0) / 60.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))

    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    out = np.stack([r, g, b], axis=-1) * 255.0
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def gray(rgb: np.ndarray) -> np.ndarray:
    """Channel-mean gray level in [0, 255] as float64."""
    return np.asarray(rgb, dtype=np.float64).mean(axis=-1)
