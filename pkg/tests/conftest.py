import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from segcritic.core import ImageRaster, SegmentationMask


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, w, h):
    return ImageRaster(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


def random_mask(rng, w, h):
    return SegmentationMask(rng.integers(0, 7, (h, w), dtype=np.uint8))


def blocky_image(rng, w, h, palette_size=4):
    """Images with few colors produce nontrivial wand components."""
    palette = rng.integers(0, 256, (palette_size, 3), dtype=np.uint8)
    idx = rng.integers(0, palette_size, (h, w))
    return ImageRaster(palette[idx])
