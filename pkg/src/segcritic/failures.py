"""Failure detection: entropy maps, ensemble disagreement, integrated-
gradients attribution for the toy backbone, and ranked region flagging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from segcritic import errors
from segcritic.core import (
    NUM_CLASSES,
    ImageRaster,
    ProbabilityMap,
    RegionSelection,
    SegmentationMask,
)
from segcritic.model import ToyBackboneParams, featurize, forward_features

MAX_ENTROPY = float(np.log(NUM_CLASSES))  # ln 7 ~ 1.9459


@dataclass(frozen=True)
class ScoreMap:
    """Nonnegative per-pixel scores (entropy, disagreement, attribution)."""

    values: np.ndarray  # (H, W) float64

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("score map must be (H, W)")
        if not np.isfinite(v).all() or (v < 0).any():
            raise ValueError("scores must be finite and nonnegative")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FlagParams:
    threshold: float = 1.0
    min_area: int = 16
    connectivity: int = 4

    def __post_init__(self):
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


def entropy_map(probs: ProbabilityMap) -> ScoreMap:
    """Per-pixel Shannon entropy (natural log), with 0 ln 0 = 0."""
    p = probs.values
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    # clamp tiny negative round-off so the ScoreMap invariant holds
    return ScoreMap(np.maximum(terms.sum(axis=2), 0.0))


def disagreement_map(masks: list[SegmentationMask]) -> ScoreMap:
    """1 - modal-class fraction per pixel across an ensemble of masks."""
    if len(masks) < 2:
        raise errors.FewerThanTwoMasks(f"need >= 2 masks, got {len(masks)}")
    shape = masks[0].labels.shape
    for m in masks[1:]:
        if m.labels.shape != shape:
            raise errors.DimensionMismatch("ensemble masks disagree on dimensions")
    stack = np.stack([m.labels for m in masks])
    counts = np.zeros((NUM_CLASSES,) + shape, dtype=np.int64)
    for c in range(NUM_CLASSES):
        counts[c] = (stack == c).sum(axis=0)
    modal = counts.max(axis=0)
    return ScoreMap(1.0 - modal / len(masks))


def integrated_gradients(
    params: ToyBackboneParams,
    image: ImageRaster,
    target_class: int,
    steps: int = 32,
    baseline: ImageRaster | None = None,
) -> np.ndarray:
    """Signed per-feature attributions of the target-class logit.

    The path runs through the backbone's input space from the baseline
    image's features to the image's features (midpoint Riemann rule), so
    completeness holds: summed attributions approach
    logit(image) - logit(baseline) per pixel as steps grow.
    Returns an (H, W, 11) float64 array.
    """
    if not (0 <= target_class < NUM_CLASSES):
        raise errors.ClassOutOfRange(f"class {target_class} out of range")
    if baseline is None:
        baseline = ImageRaster(np.zeros_like(image.pixels))
    if baseline.pixels.shape != image.pixels.shape:
        raise errors.DimensionMismatch("baseline and image dimensions differ")

    phi = featurize(image)
    phi0 = featurize(baseline)
    delta = phi - phi0

    wc = params.w2[target_class]  # (32,)
    grad_sum = np.zeros_like(phi)
    for k in range(steps):
        alpha = (k + 0.5) / steps
        point = phi0 + alpha * delta
        h = np.tanh(point @ params.w1.T + params.b1)
        # d logit_c / d phi = ((1 - h^2) * w2[c]) @ W1
        grad_sum += ((1.0 - h * h) * wc) @ params.w1
    return delta * grad_sum / steps


def attribution_map(
    params: ToyBackboneParams,
    image: ImageRaster,
    target_class: int,
    steps: int = 32,
    baseline: ImageRaster | None = None,
) -> ScoreMap:
    """L1 norm of the integrated-gradients attributions per pixel."""
    attr = integrated_gradients(params, image, target_class, steps, baseline)
    return ScoreMap(np.abs(attr).sum(axis=2))


def forward_logit_sum(
    params: ToyBackboneParams, image: ImageRaster, target_class: int
) -> np.ndarray:
    """Per-pixel target-class logit; the quantity attribution explains."""
    return forward_features(params, featurize(image))[..., target_class]


_STRUCTS = {
    4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    8: np.ones((3, 3), dtype=bool),
}


def flag_regions(score: ScoreMap, params: FlagParams) -> list[RegionSelection]:
    """Connected components of {score >= threshold} with enough area,
    ordered by descending mean score.
    """
    above = score.values >= params.threshold
    labels, count = ndimage.label(above, structure=_STRUCTS[params.connectivity])
    regions = []
    for i in range(1, count + 1):
        member = labels == i
        area = int(member.sum())
        if area < params.min_area:
            continue
        mean = float(score.values[member].mean())
        regions.append((mean, len(regions), RegionSelection(member)))
    regions.sort(key=lambda t: (-t[0], t[1]))
    return [r for _, _, r in regions]
