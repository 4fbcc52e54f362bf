"""Region descriptors: HSV histograms, LBP texture histograms, optional
backbone embeddings, and cosine similarity between them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from segcritic import errors
from segcritic.colorspace import gray, rgb_to_hsv
from segcritic.core import ImageRaster, RegionSelection
from segcritic.model import ToyBackboneParams, featurize, hidden_activations
from segcritic.texture import lbp_codes

HSV_BINS = 64  # 8 hue x 4 saturation x 2 value
LBP_BINS = 256
EMBEDDING_DIM = 32


@dataclass(frozen=True)
class RegionDescriptor:
    hsv_hist: np.ndarray  # (64,) float32, L1-normalized
    lbp_hist: np.ndarray  # (256,) float32, L1-normalized
    embedding: Optional[np.ndarray] = None  # (32,) float32

    def __post_init__(self):
        hsv = np.ascontiguousarray(self.hsv_hist, dtype=np.float32)
        lbp = np.ascontiguousarray(self.lbp_hist, dtype=np.float32)
        if hsv.shape != (HSV_BINS,) or lbp.shape != (LBP_BINS,):
            raise ValueError("descriptor histogram shapes are fixed (64,) and (256,)")
        for h in (hsv, lbp):
            if (h < 0).any() or abs(float(h.sum()) - 1.0) > 1e-6:
                raise ValueError("histograms must be nonnegative and sum to 1")
        hsv.flags.writeable = False
        lbp.flags.writeable = False
        object.__setattr__(self, "hsv_hist", hsv)
        object.__setattr__(self, "lbp_hist", lbp)
        if self.embedding is not None:
            emb = np.ascontiguousarray(self.embedding, dtype=np.float32)
            if emb.shape != (EMBEDDING_DIM,):
                raise ValueError("embedding must be (32,)")
            emb.flags.writeable = False
            object.__setattr__(self, "embedding", emb)


def hsv_bin_index(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bin layout: index = hue_bin*8 + sat_bin*2 + val_bin with 8/4/2 bins."""
    hb = np.minimum((h / 45.0).astype(np.int64), 7)
    sb = np.minimum((s * 4.0).astype(np.int64), 3)
    vb = np.minimum((v * 2.0).astype(np.int64), 1)
    return hb * 8 + sb * 2 + vb


def compute_descriptor(
    image: ImageRaster,
    sel: RegionSelection,
    model: ToyBackboneParams | None = None,
) -> RegionDescriptor:
    """Descriptor of the selected region.

    LBP codes are histogrammed only over region pixels whose 8-neighborhood
    lies fully inside the image; a region with no such pixel has no texture
    signature and is rejected.
    """
    if sel.is_empty():
        raise errors.EmptyRegion("cannot describe an empty region")
    if sel.membership.shape != image.pixels.shape[:2]:
        raise errors.DimensionMismatch("selection does not match image dimensions")

    member = sel.membership
    hsv = rgb_to_hsv(image.pixels)
    idx = hsv_bin_index(hsv[..., 0], hsv[..., 1], hsv[..., 2])
    hsv_hist = np.bincount(idx[member], minlength=HSV_BINS).astype(np.float64)
    hsv_hist /= hsv_hist.sum()

    interior = np.zeros_like(member)
    interior[1:-1, 1:-1] = member[1:-1, 1:-1]
    if not interior.any():
        raise errors.RegionTooThin("no region pixel has all 8 neighbors in bounds")
    codes = lbp_codes(gray(image.pixels))
    lbp_hist = np.bincount(codes[interior], minlength=LBP_BINS).astype(np.float64)
    lbp_hist /= lbp_hist.sum()

    embedding = None
    if model is not None:
        h = hidden_activations(model, featurize(image))
        embedding = h[member].mean(axis=0).astype(np.float32)

    return RegionDescriptor(
        hsv_hist=hsv_hist.astype(np.float32),
        lbp_hist=lbp_hist.astype(np.float32),
        embedding=embedding,
    )


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a64))
    nb = float(np.linalg.norm(b64))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a64, b64) / (na * nb))


def family_similarities(
    a: RegionDescriptor, b: RegionDescriptor
) -> tuple[float, float, Optional[float]]:
    """(hsv, lbp, embedding) cosines; embedding is None unless both have one."""
    s_hsv = cosine(a.hsv_hist, b.hsv_hist)
    s_lbp = cosine(a.lbp_hist, b.lbp_hist)
    s_emb = None
    if a.embedding is not None and b.embedding is not None:
        s_emb = cosine(a.embedding, b.embedding)
    return s_hsv, s_lbp, s_emb
