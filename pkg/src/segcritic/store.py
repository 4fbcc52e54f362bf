"""On-disk session store.

``records.log`` is the single source of truth: an append-only NDJSON
stream of prediction, correction, propagation, review, and undo events.
Mask version files (three formats per version) are derivable caches;
``rebuild`` replays the log and regenerates them byte-identically, which
is also the crash-recovery path.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from segcritic import errors
from segcritic.core import (
    CorrectionRecord,
    HumanProvenance,
    ImageRaster,
    LogitMap,
    PropagatedProvenance,
    Provenance,
    RegionSelection,
    SegmentationMask,
)
from segcritic.formats import (
    decode_bin,
    decode_image_png,
    decode_logits,
    encode_bin,
    encode_colorized_png,
    encode_indexed_png,
    encode_logits,
    encode_scoremap,
    mask_digest,
)
from segcritic.manifest import DatasetManifest, content_hash, verify_manifest
from segcritic.maskops import argmax_mask
from segcritic.model import ToyBackboneParams, load_checkpoint, predict_image, save_checkpoint
from segcritic.propagation import (
    PropagationIndex,
    build_index,
    decode_index,
    encode_index,
    propagate,
    verify_no_leakage,
)
from segcritic.regions import apply_correction

SUBDIRS = (
    "images",
    "gt",
    "labels",
    "masks",
    "logits",
    "scores",
    "flags",
    "index",
    "checkpoints",
    "reports",
)


@dataclass
class FaceState:
    version: int = -1  # -1: no prediction yet
    mask: Optional[SegmentationMask] = None
    # (record, version_before, version_after) for applied corrections
    stack: list[tuple[CorrectionRecord, int, int]] = field(default_factory=list)


@dataclass
class ReviewItem:
    item_id: str
    source_record: str
    site_id: str
    face: str
    sims: tuple[Optional[float], Optional[float], Optional[float]]
    combined: float
    corroboration: int
    proposed: dict  # CorrectionRecord JSON
    decided: Optional[str] = None  # accept | reject

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "source_record": self.source_record,
            "site_id": self.site_id,
            "face": self.face,
            "sims": list(self.sims),
            "combined": self.combined,
            "corroboration": self.corroboration,
            "proposed": self.proposed,
        }


class Store:
    """A segmentation correction store rooted at a directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        if not (self.root / "manifest.json").is_file():
            raise errors.BadStore(f"{self.root} has no manifest.json")
        self.manifest = DatasetManifest.load(self.root / "manifest.json")
        self.faces: dict[tuple[str, str], FaceState] = {}
        self.records: dict[str, CorrectionRecord] = {}
        self.review_items: dict[str, ReviewItem] = {}
        self._replay(write_caches=False)

    # -- creation ----------------------------------------------------------

    @classmethod
    def init(cls, root: Path, manifest: DatasetManifest | None = None) -> "Store":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        for sub in SUBDIRS:
            (root / sub).mkdir(exist_ok=True)
        if manifest is None:
            manifest = DatasetManifest(sites=[])
        manifest.save(root / "manifest.json")
        (root / "records.log").touch()
        return cls(root)

    @classmethod
    def open(cls, root: Path) -> "Store":
        return cls(root)

    # -- paths and basic accessors -----------------------------------------

    def log_path(self) -> Path:
        return self.root / "records.log"

    def image_path(self, site: str, face: str) -> Path:
        return self.root / self.manifest.site(site).faces[face]

    def image(self, site: str, face: str) -> ImageRaster:
        return decode_image_png(self.image_path(site, face).read_bytes())

    def _mask_dir(self, site: str, face: str) -> Path:
        return self.root / "masks" / site / face

    def mask_version_path(self, site: str, face: str, version: int) -> Path:
        return self._mask_dir(site, face) / f"v{version:04d}.bin"

    def gt_mask(self, site: str, face: str) -> Optional[SegmentationMask]:
        path = self.root / "gt" / site / f"{face}.bin"
        return decode_bin(path.read_bytes()) if path.is_file() else None

    def base_labels(self, site: str, face: str) -> Optional[SegmentationMask]:
        path = self.root / "labels" / site / f"{face}.bin"
        return decode_bin(path.read_bytes()) if path.is_file() else None

    def logits(self, site: str, face: str) -> Optional[LogitMap]:
        path = self.root / "logits" / site / f"{face}.segl"
        return decode_logits(path.read_bytes()) if path.is_file() else None

    def checkpoint_path(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.segw"

    def load_params(self, name: str) -> ToyBackboneParams:
        path = self.checkpoint_path(name)
        if not path.is_file():
            raise errors.BadStore(f"no checkpoint {name!r} in store")
        return load_checkpoint(path.read_bytes())

    def save_params(self, name: str, params: ToyBackboneParams) -> Path:
        path = self.checkpoint_path(name)
        path.write_bytes(save_checkpoint(params))
        return path

    def state(self, site: str, face: str) -> FaceState:
        key = (site, face)
        if key not in self.faces:
            self.faces[key] = FaceState()
        return self.faces[key]

    def current_mask(self, site: str, face: str) -> tuple[int, SegmentationMask]:
        st = self.state(site, face)
        if st.mask is None:
            raise errors.BadStore(f"no prediction yet for {site}/{face}")
        return st.version, st.mask

    # -- the event log -------------------------------------------------------

    def _append(self, event: dict) -> None:
        event.setdefault("ts", time.time())
        with self.log_path().open("a") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")

    def events(self) -> list[dict]:
        out = []
        path = self.log_path()
        if path.is_file():
            for line in path.read_text().splitlines():
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    # -- replay ---------------------------------------------------------------

    def _write_mask_caches(self, site: str, face: str, version: int, mask: SegmentationMask) -> None:
        d = self._mask_dir(site, face)
        d.mkdir(parents=True, exist_ok=True)
        stem = f"v{version:04d}"
        (d / f"{stem}.bin").write_bytes(encode_bin(mask))
        (d / f"{stem}.png").write_bytes(encode_indexed_png(mask))
        (d / f"{stem}_vis.png").write_bytes(encode_colorized_png(mask))

    def _predicted_mask(self, site: str, face: str, checkpoint: str) -> SegmentationMask:
        params = self.load_params(checkpoint)
        return argmax_mask(predict_image(params, self.image(site, face)))

    def _replay(self, write_caches: bool) -> None:
        """Rebuild in-memory state (and optionally the mask caches) from the
        log. Cached version files are trusted when present unless
        ``write_caches`` forces regeneration; predictions are recomputed
        from their checkpoint when the cache is missing.
        """
        self.faces.clear()
        self.records.clear()
        self.review_items.clear()
        for event in self.events():
            etype = event.get("type")
            if etype == "prediction_set":
                site, face = event["site_id"], event["face"]
                st = self.state(site, face)
                version = st.version + 1
                path = self.mask_version_path(site, face, version)
                if path.is_file() and not write_caches:
                    mask = decode_bin(path.read_bytes())
                else:
                    mask = self._predicted_mask(site, face, event["checkpoint"])
                if mask_digest(mask) != event["digest"]:
                    raise errors.BadStore(
                        f"prediction digest mismatch for {site}/{face} v{version}"
                    )
                st.mask = mask
                st.version = version
                st.stack.clear()
                if write_caches or not path.is_file():
                    self._write_mask_caches(site, face, version, mask)
            elif etype == "correction_applied":
                record = CorrectionRecord.from_json(event["record"])
                site, face = record.site_id, record.face
                st = self.state(site, face)
                if st.mask is None:
                    raise errors.BadStore(f"correction before prediction on {site}/{face}")
                if record.prior_mask_digest and record.prior_mask_digest != mask_digest(st.mask):
                    raise errors.BadStore(
                        f"record {record.record_id} does not chain onto {site}/{face}"
                    )
                labels = st.mask.labels.copy()
                labels[record.region.membership] = record.corrected_class
                new_mask = SegmentationMask(labels)
                before = st.version
                version = event["version"]
                st.stack.append((record, before, version))
                st.mask = new_mask
                st.version = version
                self.records[record.record_id] = record
                path = self.mask_version_path(site, face, version)
                if write_caches or not path.is_file():
                    self._write_mask_caches(site, face, version, new_mask)
            elif etype == "undo":
                rid = event["record_id"]
                record = self.records.get(rid)
                if record is None:
                    raise errors.BadStore(f"undo of unknown record {rid}")
                st = self.state(record.site_id, record.face)
                if not st.stack or st.stack[-1][0].record_id != rid:
                    raise errors.BadStore(f"undo of non-top record {rid}")
                _, before, _ = st.stack.pop()
                path = self.mask_version_path(record.site_id, record.face, before)
                st.mask = decode_bin(path.read_bytes())
                st.version = before
                del self.records[rid]
            elif etype == "propagation_run":
                for item_json in event.get("review_items", []):
                    item = ReviewItem(
                        item_id=item_json["item_id"],
                        source_record=item_json["source_record"],
                        site_id=item_json["site_id"],
                        face=item_json["face"],
                        sims=tuple(item_json["sims"]),
                        combined=item_json["combined"],
                        corroboration=item_json["corroboration"],
                        proposed=item_json["proposed"],
                    )
                    self.review_items.setdefault(item.item_id, item)
            elif etype == "review_decision":
                item = self.review_items.get(event["item_id"])
                if item is not None:
                    item.decided = event["decision"]

    def rebuild(self) -> None:
        """Regenerate every derived mask cache from the log (crash recovery)."""
        for d in (self.root / "masks").glob("*/*/"):
            for f in d.iterdir():
                f.unlink()
        self._replay(write_caches=True)

    # -- mutations -----------------------------------------------------------

    def _next_version(self, site: str, face: str) -> int:
        return self.state(site, face).version + 1

    def set_prediction(self, site: str, face: str, mask: SegmentationMask, checkpoint: str) -> int:
        st = self.state(site, face)
        version = st.version + 1
        st.mask = mask
        st.version = version
        st.stack.clear()
        self._write_mask_caches(site, face, version, mask)
        self._append(
            {
                "type": "prediction_set",
                "site_id": site,
                "face": face,
                "version": version,
                "digest": mask_digest(mask),
                "checkpoint": checkpoint,
            }
        )
        return version

    def apply_record(
        self,
        site: str,
        face: str,
        region: RegionSelection,
        new_class: int,
        intervention_type: str,
        provenance: Provenance,
        record_id: str | None = None,
        session_id: str | None = None,
    ) -> CorrectionRecord:
        st = self.state(site, face)
        if st.mask is None:
            raise errors.BadStore(f"no prediction yet for {site}/{face}")
        new_mask, record = apply_correction(
            st.mask,
            region,
            new_class,
            intervention_type,
            provenance,
            site_id=site,
            face=face,
            record_id=record_id,
        )
        before = st.version
        version = before + 1
        st.stack.append((record, before, version))
        st.mask = new_mask
        st.version = version
        self.records[record.record_id] = record
        self._write_mask_caches(site, face, version, new_mask)
        event = {
            "type": "correction_applied",
            "version": version,
            "record": record.to_json(),
        }
        if session_id:
            event["session_id"] = session_id
        self._append(event)
        return record

    def undo(self, record_id: str) -> int:
        """Undo a record that is on top of its face's stack; returns the
        version the face reverted to.
        """
        record = self.records.get(record_id)
        if record is None:
            raise KeyError(record_id)
        st = self.state(record.site_id, record.face)
        if not st.stack or st.stack[-1][0].record_id != record_id:
            raise errors.AlreadyDecided(f"record {record_id} is not undoable")
        _, before, _ = st.stack.pop()
        path = self.mask_version_path(record.site_id, record.face, before)
        st.mask = decode_bin(path.read_bytes())
        st.version = before
        del self.records[record_id]
        self._append({"type": "undo", "record_id": record_id})
        return before

    # -- propagation ----------------------------------------------------------

    def train_images_with_hashes(self):
        for site in self.manifest.sites:
            if site.split != "train":
                continue
            for face in site.faces:
                data = self.image_path(site.site_id, face).read_bytes()
                yield site.site_id, face, decode_image_png(data), content_hash(data)

    def index_path(self) -> Path:
        return self.root / "index" / "prop.segi"

    def build_propagation_index(
        self, grid: int = 8, tolerance: float = 75.0, model: ToyBackboneParams | None = None
    ) -> PropagationIndex:
        bad = verify_manifest(self.manifest, self.root)
        if bad:
            raise errors.BadStore(f"manifest verification failed: {bad[0]}")
        index = build_index(self.manifest, self.train_images_with_hashes(), grid, tolerance, model)
        self.index_path().write_bytes(encode_index(index))
        return index

    def load_index(self) -> PropagationIndex:
        path = self.index_path()
        if not path.is_file():
            raise errors.BadStore("no propagation index; run the propagate build first")
        index = decode_index(path.read_bytes())
        leaks = verify_no_leakage(index, self.manifest)
        if leaks:
            raise errors.LeakageViolation(leaks[0].image_hash)
        return index

    def _region_already_corrected(self, site: str, face: str, region: RegionSelection) -> bool:
        st = self.faces.get((site, face))
        if not st:
            return False
        for rec, _, _ in st.stack:
            if (rec.region.membership & region.membership).any():
                return True
        return False

    def run_propagation(
        self,
        record_id: str,
        tau: float = 0.85,
        k: int | None = None,
        index: PropagationIndex | None = None,
    ) -> dict:
        record = self.records.get(record_id)
        if record is None:
            raise KeyError(record_id)
        if not record.is_human():
            raise errors.NotHumanProvenance(f"record {record_id} is not a human correction")
        if index is None:
            index = self.load_index()
        image = self.image(record.site_id, record.face)
        k_eff = len(index) if k is None else k
        outcome = propagate(record, image, index, tau=tau, k=k_eff)

        applied = []
        for auto in outcome.auto_applied:
            if auto.record_id in self.records:
                continue  # (source, candidate) already applied
            if self._region_already_corrected(auto.site_id, auto.face, auto.region):
                continue
            applied.append(
                self.apply_record(
                    auto.site_id,
                    auto.face,
                    auto.region,
                    auto.corrected_class,
                    auto.intervention_type,
                    auto.provenance,
                    record_id=auto.record_id,
                )
            )

        review_items = []
        for match, proposed in outcome.review_queue:
            item_id = proposed.record_id
            if item_id in self.review_items or item_id in self.records:
                continue
            item = ReviewItem(
                item_id=item_id,
                source_record=record_id,
                site_id=proposed.site_id,
                face=proposed.face,
                sims=match.sims,
                combined=match.combined,
                corroboration=match.corroboration,
                proposed=proposed.to_json(),
            )
            self.review_items[item.item_id] = item
            review_items.append(item)

        self._append(
            {
                "type": "propagation_run",
                "source_record": record_id,
                "auto_count": len(applied),
                "review_count": len(review_items),
                "review_items": [i.to_json() for i in review_items],
            }
        )
        return {
            "source_record": record_id,
            "auto_applied": [r.record_id for r in applied],
            "review_items": [i.item_id for i in review_items],
        }

    def pending_reviews(self) -> list[ReviewItem]:
        return [i for i in self.review_items.values() if i.decided is None]

    def decide_review(self, item_id: str, accept: bool) -> Optional[CorrectionRecord]:
        item = self.review_items.get(item_id)
        if item is None:
            raise KeyError(item_id)
        if item.decided is not None:
            raise errors.AlreadyDecided(f"review item {item_id} already decided")
        record = None
        if accept:
            proposed = CorrectionRecord.from_json(item.proposed)
            prov = proposed.provenance
            assert isinstance(prov, PropagatedProvenance)
            record = self.apply_record(
                proposed.site_id,
                proposed.face,
                proposed.region,
                proposed.corrected_class,
                proposed.intervention_type,
                PropagatedProvenance(
                    source_record=prov.source_record,
                    family_similarities=prov.family_similarities,
                    confirmed=True,
                ),
                record_id=proposed.record_id,
            )
        item.decided = "accept" if accept else "reject"
        self._append(
            {
                "type": "review_decision",
                "item_id": item_id,
                "decision": item.decided,
            }
        )
        return record

    # -- caches for logits/scores ----------------------------------------------

    def save_logits(self, site: str, face: str, logits: LogitMap) -> None:
        d = self.root / "logits" / site
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{face}.segl").write_bytes(encode_logits(logits))

    def save_scores(self, site: str, face: str, scores: np.ndarray) -> None:
        d = self.root / "scores" / site
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{face}.segf").write_bytes(encode_scoremap(scores))

    def save_flags(self, site: str, face: str, flags: list[dict]) -> None:
        d = self.root / "flags" / site
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{face}.json").write_text(json.dumps(flags, indent=1))

    def applied_records(self) -> list[CorrectionRecord]:
        return list(self.records.values())
