"""Human-in-the-loop segmentation correction engine.

Detects likely failure regions in segmentation outputs, lets a critic fix
them with region-growing selection, propagates the fixes to visually
similar regions across the training split, and fine-tunes a small
differentiable backbone on the corrections.
"""

from segcritic.core import (
    DEFAULT_TAXONOMY,
    ClassTaxonomy,
    CorrectionRecord,
    CounterfactualTriple,
    HumanProvenance,
    ImageRaster,
    LogitMap,
    ProbabilityMap,
    PropagatedProvenance,
    RegionSelection,
    SegmentationMask,
)

__all__ = [
    "DEFAULT_TAXONOMY",
    "ClassTaxonomy",
    "CorrectionRecord",
    "CounterfactualTriple",
    "HumanProvenance",
    "ImageRaster",
    "LogitMap",
    "ProbabilityMap",
    "PropagatedProvenance",
    "RegionSelection",
    "SegmentationMask",
]

__version__ = "0.1.0"
