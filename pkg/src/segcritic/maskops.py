"""Pointwise operations on logit and probability maps."""

import numpy as np

from segcritic.core import LogitMap, ProbabilityMap, SegmentationMask


def softmax(logits: LogitMap) -> ProbabilityMap:
    """Per-pixel softmax, stabilized by max-subtraction."""
    v = logits.values
    shifted = v - v.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    return ProbabilityMap(e / e.sum(axis=2, keepdims=True))


def argmax_mask(logits: LogitMap) -> SegmentationMask:
    """Per-pixel argmax; ties break toward the lowest class id."""
    return SegmentationMask(np.argmax(logits.values, axis=2).astype(np.uint8))
