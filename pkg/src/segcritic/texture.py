"""Local binary patterns and 3x3 window statistics.

One shared implementation keeps the descriptor pipeline and the model
features bit-compatible: LBP bit k is set iff the neighbor at offset
``LBP_OFFSETS[k]`` is strictly greater than the center. Borders are
edge-clamped, so a clamped neighbor compares the pixel with itself and
contributes a zero bit.
"""

import numpy as np

# (dy, dx) clockwise from the top-left neighbor
LBP_OFFSETS = (
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
)


def _shifted(padded: np.ndarray, dy: int, dx: int, h: int, w: int) -> np.ndarray:
    return padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """Per-pixel 8-bit LBP code over an (H, W) gray array."""
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    padded = np.pad(gray, 1, mode="edge")
    codes = np.zeros((h, w), dtype=np.uint8)
    for bit, (dy, dx) in enumerate(LBP_OFFSETS):
        codes |= (_shifted(padded, dy, dx, h, w) > gray).astype(np.uint8) << bit
    return codes


def window_mean_std(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 edge-clamped window mean and population std per pixel."""
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    padded = np.pad(gray, 1, mode="edge")
    acc = np.zeros((h, w))
    acc2 = np.zeros((h, w))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            win = _shifted(padded, dy, dx, h, w)
            acc += win
            acc2 += win * win
    mean = acc / 9.0
    var = np.maximum(acc2 / 9.0 - mean * mean, 0.0)
    return mean, np.sqrt(var)
