"""Domain types: taxonomy, rasters, masks, selections, correction records.

All types are immutable after construction (arrays are frozen read-only),
so instances are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from segcritic import errors

NUM_CLASSES = 7

CUBE_FACES = ("up", "down", "north", "south", "east", "west")
FLAT_FACE = "flat"
ALL_FACES = CUBE_FACES + (FLAT_FACE,)

INTERVENTION_TYPES = (
    "feature_suppression",
    "boundary_refinement",
    "context_reweighting",
)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class set: (id, name, (r, g, b)) with ids contiguous 0..6."""

    entries: tuple[tuple[int, str, tuple[int, int, int]], ...]

    def __post_init__(self):
        if len(self.entries) != NUM_CLASSES:
            raise ValueError(f"taxonomy must have exactly {NUM_CLASSES} entries")
        ids = [e[0] for e in self.entries]
        if ids != list(range(NUM_CLASSES)):
            raise ValueError("class ids must be contiguous 0..6 in order")
        names = [e[1] for e in self.entries]
        if len(set(names)) != NUM_CLASSES:
            raise ValueError("class names must be unique")
        colors = [e[2] for e in self.entries]
        if len(set(colors)) != NUM_CLASSES:
            raise ValueError("class colors must be unique")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e[1] for e in self.entries)

    @property
    def colors(self) -> np.ndarray:
        """(7, 3) uint8 palette indexed by class id."""
        return np.array([e[2] for e in self.entries], dtype=np.uint8)

    def palette_bytes(self) -> bytes:
        return self.colors.tobytes()


# Id order is fixed here (background first, then sky .. non-permanent);
# the palette doubles as the indexed-PNG palette and the overlay colors.
DEFAULT_TAXONOMY = ClassTaxonomy(
    entries=(
        (0, "background", (0, 0, 0)),
        (1, "sky", (70, 130, 180)),
        (2, "trees_plants", (34, 139, 34)),
        (3, "buildings", (178, 34, 34)),
        (4, "impervious", (128, 128, 128)),
        (5, "pervious", (210, 180, 140)),
        (6, "non_permanent", (255, 165, 0)),
    )
)


@dataclass(frozen=True)
class ImageRaster:
    """Row-major 8-bit RGB image."""

    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be (H, W, 3) with H, W >= 1")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """Dense per-pixel class ids over the 7-class taxonomy."""

    labels: np.ndarray  # (H, W) uint8

    def __eq__(self, other):
        if not isinstance(other, SegmentationMask):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def __post_init__(self):
        lb = np.asarray(self.labels, dtype=np.uint8)
        if lb.ndim != 2 or lb.shape[0] < 1 or lb.shape[1] < 1:
            raise ValueError("mask must be (H, W) with H, W >= 1")
        if lb.max(initial=0) >= NUM_CLASSES:
            raise errors.LabelOutOfRange(f"label {int(lb.max())} >= {NUM_CLASSES}")
        object.__setattr__(self, "labels", _freeze(lb))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class LogitMap:
    """Per-pixel, per-class real scores, shape (H, W, 7)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != NUM_CLASSES:
            raise ValueError("logits must be (H, W, 7)")
        if not np.isfinite(v).all():
            raise ValueError("logits must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ProbabilityMap:
    """Like LogitMap but rows sum to one per pixel."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != NUM_CLASSES:
            raise ValueError("probabilities must be (H, W, 7)")
        if not np.isfinite(v).all() or (v < 0).any() or (v > 1).any():
            raise ValueError("probabilities must be finite and in [0, 1]")
        sums = v.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("per-pixel probabilities must sum to 1 within 1e-6")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class RegionSelection:
    """Pixel subset of a host image; the unit of human intervention."""

    membership: np.ndarray  # (H, W) bool

    def __eq__(self, other):
        if not isinstance(other, RegionSelection):
            return NotImplemented
        return np.array_equal(self.membership, other.membership)

    def __post_init__(self):
        m = np.asarray(self.membership, dtype=bool)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValueError("selection must be (H, W) with H, W >= 1")
        object.__setattr__(self, "membership", _freeze(m))

    @property
    def height(self) -> int:
        return self.membership.shape[0]

    @property
    def width(self) -> int:
        return self.membership.shape[1]

    @property
    def size(self) -> int:
        return int(self.membership.sum())

    def is_empty(self) -> bool:
        return not self.membership.any()

    def to_rle(self) -> list[int]:
        """Row-major run lengths, alternating, starting with a False run."""
        flat = self.membership.ravel()
        if flat.size == 0:
            return []
        changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate([[0], changes, [flat.size]])
        runs = np.diff(bounds).tolist()
        if flat[0]:
            runs = [0] + runs
        return [int(r) for r in runs]

    @classmethod
    def from_rle(cls, width: int, height: int, runs: list[int]) -> "RegionSelection":
        total = sum(runs)
        if total != width * height:
            raise ValueError(f"RLE covers {total} pixels, expected {width * height}")
        flat = np.zeros(width * height, dtype=bool)
        pos = 0
        value = False
        for run in runs:
            if value:
                flat[pos : pos + run] = True
            pos += run
            value = not value
        return cls(flat.reshape(height, width))

    @classmethod
    def full(cls, width: int, height: int) -> "RegionSelection":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def empty(cls, width: int, height: int) -> "RegionSelection":
        return cls(np.zeros((height, width), dtype=bool))


@dataclass(frozen=True)
class HumanProvenance:
    interactions: int
    elapsed_s: float

    kind = "human"


@dataclass(frozen=True)
class PropagatedProvenance:
    source_record: str
    # (hsv, lbp, embedding) cosine similarities; None when a family is absent
    family_similarities: tuple[Optional[float], Optional[float], Optional[float]]
    confirmed: bool

    kind = "propagated"


Provenance = Union[HumanProvenance, PropagatedProvenance]


@dataclass(frozen=True)
class CorrectionRecord:
    """One intervention: region, corrected class, type, and provenance."""

    record_id: str
    site_id: str
    face: str
    region: RegionSelection
    corrected_class: int
    intervention_type: str
    provenance: Provenance
    created_at: float
    prior_mask_digest: str = ""

    def __post_init__(self):
        if not (0 <= self.corrected_class < NUM_CLASSES):
            raise errors.ClassOutOfRange(f"class {self.corrected_class} out of range")
        if self.region.is_empty():
            raise errors.EmptySelection("correction region is empty")
        if self.face not in ALL_FACES:
            raise ValueError(f"unknown face {self.face!r}")
        if self.intervention_type not in INTERVENTION_TYPES:
            raise ValueError(f"unknown intervention type {self.intervention_type!r}")

    def is_human(self) -> bool:
        return isinstance(self.provenance, HumanProvenance)

    def to_json(self) -> dict:
        if isinstance(self.provenance, HumanProvenance):
            prov = {
                "kind": "human",
                "interactions": self.provenance.interactions,
                "elapsed_s": self.provenance.elapsed_s,
            }
        else:
            prov = {
                "kind": "propagated",
                "source_record": self.provenance.source_record,
                "family_similarities": list(self.provenance.family_similarities),
                "confirmed": self.provenance.confirmed,
            }
        return {
            "record_id": self.record_id,
            "site_id": self.site_id,
            "face": self.face,
            "width": self.region.width,
            "height": self.region.height,
            "region_rle": self.region.to_rle(),
            "corrected_class": self.corrected_class,
            "intervention_type": self.intervention_type,
            "provenance": prov,
            "created_at": self.created_at,
            "prior_mask_digest": self.prior_mask_digest,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CorrectionRecord":
        p = d["provenance"]
        if p["kind"] == "human":
            prov: Provenance = HumanProvenance(
                interactions=int(p["interactions"]), elapsed_s=float(p["elapsed_s"])
            )
        else:
            sims = p["family_similarities"]
            prov = PropagatedProvenance(
                source_record=p["source_record"],
                family_similarities=(
                    None if sims[0] is None else float(sims[0]),
                    None if sims[1] is None else float(sims[1]),
                    None if sims[2] is None else float(sims[2]),
                ),
                confirmed=bool(p["confirmed"]),
            )
        region = RegionSelection.from_rle(d["width"], d["height"], d["region_rle"])
        return cls(
            record_id=d["record_id"],
            site_id=d["site_id"],
            face=d["face"],
            region=region,
            corrected_class=int(d["corrected_class"]),
            intervention_type=d["intervention_type"],
            provenance=prov,
            created_at=float(d["created_at"]),
            prior_mask_digest=d.get("prior_mask_digest", ""),
        )


@dataclass(frozen=True)
class CounterfactualTriple:
    """(image, model prediction, corrected mask) restricted to a region."""

    image_ref: str
    predicted: SegmentationMask
    corrected: SegmentationMask
    region: RegionSelection

    def __post_init__(self):
        shapes = {
            self.predicted.labels.shape,
            self.corrected.labels.shape,
            self.region.membership.shape,
        }
        if len(shapes) != 1:
            raise errors.DimensionMismatch("triple components disagree on dimensions")
        diff = self.predicted.labels != self.corrected.labels
        if (diff & ~self.region.membership).any():
            raise ValueError("predicted and corrected may differ only inside the region")
