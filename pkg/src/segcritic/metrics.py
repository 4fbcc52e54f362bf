"""Segmentation metrics and correction-effort accounting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from segcritic import errors
from segcritic.core import NUM_CLASSES, RegionSelection, SegmentationMask


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (7, 7) int64, rows = ground truth, cols = prediction

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (NUM_CLASSES, NUM_CLASSES) or (c < 0).any():
            raise ValueError("confusion matrix must be nonnegative (7, 7)")
        c = np.ascontiguousarray(c)
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion_matrix(
    pred: SegmentationMask,
    gt: SegmentationMask,
    ignore: RegionSelection | None = None,
) -> ConfusionMatrix:
    if pred.labels.shape != gt.labels.shape:
        raise errors.DimensionMismatch(
            f"pred {pred.labels.shape} vs gt {gt.labels.shape}"
        )
    keep = np.ones(pred.labels.shape, dtype=bool)
    if ignore is not None:
        if ignore.membership.shape != pred.labels.shape:
            raise errors.DimensionMismatch("ignore region dimensions differ")
        keep &= ~ignore.membership
    g = gt.labels[keep].astype(np.int64)
    p = pred.labels[keep].astype(np.int64)
    counts = np.bincount(
        g * NUM_CLASSES + p, minlength=NUM_CLASSES * NUM_CLASSES
    ).reshape(NUM_CLASSES, NUM_CLASSES)
    return ConfusionMatrix(counts)


def miou(cm: ConfusionMatrix) -> tuple[list[Optional[float]], float]:
    """Per-class IoU (None where the union is empty) and their mean."""
    if cm.total == 0:
        raise errors.EmptyMatrix("confusion matrix counts no pixels")
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    union = c.sum(axis=0) + c.sum(axis=1) - tp
    per_class: list[Optional[float]] = []
    defined = []
    for k in range(NUM_CLASSES):
        if union[k] > 0:
            iou = float(tp[k] / union[k])
            per_class.append(iou)
            defined.append(iou)
        else:
            per_class.append(None)
    return per_class, float(np.mean(defined))


def _erode(mask: np.ndarray, d: int) -> np.ndarray:
    struct = np.ones((2 * d + 1, 2 * d + 1), dtype=bool)
    return ndimage.binary_erosion(mask, structure=struct, border_value=0)


def boundary_band(mask: np.ndarray, d: int) -> np.ndarray:
    """Pixels of the mask within Chebyshev distance d of its complement
    (the image border counts as complement): X \\ erode(X, d).
    """
    return mask & ~_erode(mask, d)


def boundary_iou(
    pred: SegmentationMask, gt: SegmentationMask, class_id: int, d: int = 2
) -> Optional[float]:
    """IoU of the width-d boundary bands of the class indicator masks.

    Returns None when both bands are empty (no boundary to score).
    """
    if pred.labels.shape != gt.labels.shape:
        raise errors.DimensionMismatch("pred and gt dimensions differ")
    band_p = boundary_band(pred.labels == class_id, d)
    band_g = boundary_band(gt.labels == class_id, d)
    union = int((band_p | band_g).sum())
    if union == 0:
        return None
    return float(int((band_p & band_g).sum()) / union)


# ---------------------------------------------------------------------------
# Session log


@dataclass
class SessionLog:
    """Append-only event list backing effort and propagation accounting.

    Events are dicts with a "type" key; timestamps must be nondecreasing
    and record ids unique.
    """

    events: list[dict] = field(default_factory=list)

    def append(self, event: dict) -> None:
        if self.events:
            last_ts = self.events[-1].get("ts", 0.0)
            if event.get("ts", last_ts) < last_ts:
                raise ValueError("event timestamps must be nondecreasing")
        rid = event.get("record", {}).get("record_id")
        if rid is not None and rid in self._record_ids():
            raise ValueError(f"duplicate record id {rid}")
        self.events.append(event)

    def _record_ids(self) -> set[str]:
        return {
            e["record"]["record_id"]
            for e in self.events
            if e.get("type") == "correction_applied"
        }

    def corrections(self) -> list[dict]:
        return [e for e in self.events if e.get("type") == "correction_applied"]

    def to_ndjson(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    @classmethod
    def from_ndjson(cls, text: str) -> "SessionLog":
        log = cls()
        for line in text.splitlines():
            line = line.strip()
            if line:
                log.events.append(json.loads(line))
        return log


def propagation_gain(log: SessionLog) -> float:
    """Fraction of applied correction records that were auto-applied."""
    corrections = log.corrections()
    if not corrections:
        raise errors.EmptyLog("no correction events")
    auto = sum(
        1
        for e in corrections
        if e["record"]["provenance"]["kind"] == "propagated"
        and not e["record"]["provenance"].get("confirmed", False)
    )
    return auto / len(corrections)


def effort_stats(log: SessionLog) -> tuple[float, float]:
    """(mean seconds, mean interactions) per corrected image, over
    human-provenance records only.
    """
    per_image: dict[tuple[str, str], list[tuple[float, int]]] = {}
    for e in log.corrections():
        rec = e["record"]
        prov = rec["provenance"]
        if prov["kind"] != "human":
            continue
        key = (rec["site_id"], rec["face"])
        per_image.setdefault(key, []).append(
            (float(prov["elapsed_s"]), int(prov["interactions"]))
        )
    if not per_image:
        raise errors.EmptyLog("no human correction events")
    seconds = [sum(s for s, _ in v) for v in per_image.values()]
    clicks = [sum(i for _, i in v) for v in per_image.values()]
    return float(np.mean(seconds)), float(np.mean(clicks))
