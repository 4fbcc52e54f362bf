"""Interactive selection mechanics and mask editing.

The magic wand grows a connected component around a clicked seed; the
similarity test compares every pixel against the fixed seed color, so the
result is independent of traversal order.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from segcritic import errors
from segcritic.colorspace import hsv_to_rgb, rgb_to_hsv
from segcritic.core import (
    NUM_CLASSES,
    CorrectionRecord,
    ImageRaster,
    LogitMap,
    Provenance,
    RegionSelection,
    SegmentationMask,
)
from segcritic.formats import mask_digest

MAX_RGB_DISTANCE = float(np.sqrt(3 * 255.0**2))  # ~441.7

_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return _STRUCT_4
    if connectivity == 8:
        return _STRUCT_8
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def _square(radius: int) -> np.ndarray:
    if radius < 1:
        raise ValueError("radius must be >= 1")
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


@dataclass(frozen=True)
class WandParams:
    tolerance: float = 30.0
    connectivity: int = 4

    def __post_init__(self):
        if not (0.0 <= self.tolerance <= MAX_RGB_DISTANCE):
            raise ValueError(f"tolerance must be in [0, {MAX_RGB_DISTANCE:.1f}]")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


def wand_select(
    image: ImageRaster, seed: tuple[int, int], params: WandParams
) -> RegionSelection:
    """Region growing from ``seed`` (x, y): the connected component of
    pixels within ``tolerance`` Euclidean RGB distance of the seed color.
    """
    x, y = seed
    if not (0 <= x < image.width and 0 <= y < image.height):
        raise errors.SeedOutOfBounds(f"seed ({x}, {y}) outside {image.width}x{image.height}")
    px = image.pixels.astype(np.int64)
    seed_color = px[y, x]
    dist2 = ((px - seed_color) ** 2).sum(axis=2)
    within = dist2 <= params.tolerance**2
    labels, _ = ndimage.label(within, structure=_structure(params.connectivity))
    return RegionSelection(labels == labels[y, x])


def refine_selection(sel: RegionSelection, mode: str, radius: int = 1) -> RegionSelection:
    """Dilate (expand) or erode (shrink) with a square element of the given
    radius; pixels outside the frame count as unselected.
    """
    struct = _square(radius)
    if mode == "expand":
        out = ndimage.binary_dilation(sel.membership, structure=struct)
    elif mode == "shrink":
        out = ndimage.binary_erosion(sel.membership, structure=struct, border_value=0)
    else:
        raise ValueError(f"mode must be 'expand' or 'shrink', got {mode!r}")
    return RegionSelection(out)


def apply_correction(
    mask: SegmentationMask,
    sel: RegionSelection,
    new_class: int,
    intervention_type: str,
    provenance: Provenance,
    *,
    site_id: str = "",
    face: str = "flat",
    record_id: str | None = None,
    created_at: float | None = None,
) -> tuple[SegmentationMask, CorrectionRecord]:
    """Set ``new_class`` on the selected pixels and log the intervention.

    The record keeps the prior mask digest so undo-by-replay can verify it
    restored the right state.
    """
    if sel.is_empty():
        raise errors.EmptySelection("cannot correct an empty selection")
    if not (0 <= new_class < NUM_CLASSES):
        raise errors.ClassOutOfRange(f"class {new_class} out of range")
    if sel.membership.shape != mask.labels.shape:
        raise errors.DimensionMismatch(
            f"selection {sel.membership.shape} vs mask {mask.labels.shape}"
        )
    labels = mask.labels.copy()
    labels[sel.membership] = new_class
    record = CorrectionRecord(
        record_id=record_id or uuid.uuid4().hex,
        site_id=site_id,
        face=face,
        region=sel,
        corrected_class=new_class,
        intervention_type=intervention_type,
        provenance=provenance,
        created_at=time.time() if created_at is None else created_at,
        prior_mask_digest=mask_digest(mask),
    )
    return SegmentationMask(labels), record


# ---------------------------------------------------------------------------
# CLAHE


def _clahe_gray(channel: np.ndarray, clip_limit: float, tiles: tuple[int, int]) -> np.ndarray:
    """CLAHE on a uint8 single-channel image.

    Per-tile histograms are clipped at clip_limit * tile_pixels / 256 with
    the excess redistributed uniformly; the per-tile transfer function is
    midpoint-CDF equalization. A tile whose histogram is a single spike has
    no contrast to redistribute and maps identically, which makes constant
    images exact fixed points. Pixel values blend the four surrounding tile
    transfer functions bilinearly.
    """
    h, w = channel.shape
    ty, tx = tiles
    ty, tx = min(ty, h), min(tx, w)
    y_edges = np.linspace(0, h, ty + 1).astype(int)
    x_edges = np.linspace(0, w, tx + 1).astype(int)

    identity = np.arange(256, dtype=np.float64)
    luts = np.empty((ty, tx, 256), dtype=np.float64)
    for i in range(ty):
        for j in range(tx):
            tile = channel[y_edges[i] : y_edges[i + 1], x_edges[j] : x_edges[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            n = tile.size
            if np.count_nonzero(hist) <= 1:
                luts[i, j] = identity
                continue
            clip = max(clip_limit * n / 256.0, 1.0)
            excess = np.maximum(hist - clip, 0.0).sum()
            hist = np.minimum(hist, clip) + excess / 256.0
            cdf = np.cumsum(hist)
            mid = cdf - hist / 2.0
            luts[i, j] = 255.0 * mid / n

    # tile centers for interpolation
    cy = (y_edges[:-1] + y_edges[1:]) / 2.0
    cx = (x_edges[:-1] + x_edges[1:]) / 2.0

    yy = np.arange(h, dtype=np.float64)
    xx = np.arange(w, dtype=np.float64)
    iy = np.clip(np.searchsorted(cy, yy) - 1, 0, max(ty - 2, 0))
    ix = np.clip(np.searchsorted(cx, xx) - 1, 0, max(tx - 2, 0))
    if ty > 1:
        wy = np.clip((yy - cy[iy]) / np.maximum(cy[iy + 1] - cy[iy], 1e-12), 0.0, 1.0)
    else:
        iy = np.zeros(h, dtype=int)
        wy = np.zeros(h)
    if tx > 1:
        wx = np.clip((xx - cx[ix]) / np.maximum(cx[ix + 1] - cx[ix], 1e-12), 0.0, 1.0)
    else:
        ix = np.zeros(w, dtype=int)
        wx = np.zeros(w)

    iy2 = np.minimum(iy + 1, ty - 1)
    ix2 = np.minimum(ix + 1, tx - 1)
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    v = channel
    top = (1 - wx)[None, :] * luts[iy[gy], ix[gx], v] + wx[None, :] * luts[iy[gy], ix2[gx], v]
    bot = (1 - wx)[None, :] * luts[iy2[gy], ix[gx], v] + wx[None, :] * luts[iy2[gy], ix2[gx], v]
    out = (1 - wy)[:, None] * top + wy[:, None] * bot
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def clahe(
    image: ImageRaster, clip_limit: float = 2.0, tiles: tuple[int, int] = (8, 8)
) -> ImageRaster:
    """Contrast-limited adaptive histogram equalization on the HSV value
    channel; hue and saturation pass through untouched.
    """
    if clip_limit <= 0:
        raise ValueError("clip_limit must be > 0")
    if tiles[0] < 1 or tiles[1] < 1:
        raise ValueError("tiles must be >= (1, 1)")
    hsv = rgb_to_hsv(image.pixels)
    v8 = np.clip(np.round(hsv[..., 2] * 255.0), 0, 255).astype(np.uint8)
    v_eq = _clahe_gray(v8, clip_limit, tiles)
    hsv_out = hsv.copy()
    hsv_out[..., 2] = v_eq / 255.0
    return ImageRaster(hsv_to_rgb(hsv_out))


def morph_cleanup(
    mask: SegmentationMask,
    target_class: int = 1,
    open_r: int = 1,
    close_r: int = 2,
    logits: LogitMap | None = None,
) -> SegmentationMask:
    """Open-then-close the target-class indicator to remove speckles and
    fill pinholes. Pixels dropped from the class take the runner-up class
    from the logits when given, otherwise background (class 0).
    """
    ind = mask.labels == target_class
    opened = ndimage.binary_opening(ind, structure=_square(open_r))
    cleaned = ndimage.binary_closing(opened, structure=_square(close_r))

    labels = mask.labels.copy()
    removed = ind & ~cleaned
    added = cleaned & ~ind
    if removed.any():
        if logits is not None:
            v = logits.values.copy()
            v[..., target_class] = -np.inf
            runner_up = np.argmax(v, axis=2).astype(np.uint8)
            labels[removed] = runner_up[removed]
        else:
            labels[removed] = 0
    labels[added] = target_class
    return SegmentationMask(labels)
