"""Dataset-wide correction propagation.

A train-only retrieval index stores wand-grown candidate regions with
their descriptors. Querying a human correction against the index yields
matches; matches corroborated by at least two descriptor families are
auto-applied, near-misses go to a review queue, and everything else is
dropped. Propagated records are never propagated again.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from segcritic import errors
from segcritic.core import (
    ALL_FACES,
    CorrectionRecord,
    ImageRaster,
    PropagatedProvenance,
    RegionSelection,
)
from segcritic.descriptors import (
    EMBEDDING_DIM,
    HSV_BINS,
    LBP_BINS,
    RegionDescriptor,
    compute_descriptor,
    family_similarities,
)
from segcritic.manifest import DatasetManifest
from segcritic.model import ToyBackboneParams
from segcritic.regions import WandParams, wand_select

DEFAULT_TAU = 0.85
DEFAULT_TOP_K = 5
DEFAULT_GRID = 8
DEFAULT_BUILD_TOLERANCE = 75.0
REVIEW_FLOOR_FACTOR = 0.8

INDEX_MAGIC = b"SEGI"
INDEX_VERSION = 1


@dataclass(frozen=True)
class CandidateRegion:
    site_id: str
    face: str
    selection: RegionSelection
    descriptor: RegionDescriptor
    image_hash: str

    @property
    def candidate_id(self) -> str:
        h = hashlib.sha256()
        h.update(self.site_id.encode())
        h.update(self.face.encode())
        h.update(struct.pack("<II", self.selection.width, self.selection.height))
        h.update(np.asarray(self.selection.to_rle(), dtype="<u4").tobytes())
        return h.hexdigest()


@dataclass
class PropagationIndex:
    candidates: list[CandidateRegion]
    train_hashes: set[str]
    grid: int
    tolerance: float
    manifest_digest: str

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class Match:
    candidate: CandidateRegion
    sims: tuple[float, float, Optional[float]]
    combined: float
    corroboration: int


@dataclass
class PropagationOutcome:
    auto_applied: list[CorrectionRecord] = field(default_factory=list)
    review_queue: list[tuple[Match, CorrectionRecord]] = field(default_factory=list)


def build_index(
    manifest: DatasetManifest,
    images: Iterable[tuple[str, str, ImageRaster, str]],
    grid: int = DEFAULT_GRID,
    tolerance: float = DEFAULT_BUILD_TOLERANCE,
    model: ToyBackboneParams | None = None,
) -> PropagationIndex:
    """Grow candidate regions from a grid x grid seed lattice on each train
    image. A seed falling inside already-covered area is skipped, so each
    region is kept the first time any of its pixels is reached.

    ``images`` yields (site_id, face, image, content_hash); offering an
    image whose hash is outside the train split raises LeakageViolation.
    """
    train = manifest.train_hashes()
    params = WandParams(tolerance=tolerance, connectivity=4)
    candidates: list[CandidateRegion] = []
    for site_id, face, image, image_hash in images:
        if image_hash not in train:
            raise errors.LeakageViolation(image_hash)
        covered = np.zeros((image.height, image.width), dtype=bool)
        for gy in range(grid):
            for gx in range(grid):
                x = int((gx + 0.5) * image.width / grid)
                y = int((gy + 0.5) * image.height / grid)
                if covered[y, x]:
                    continue
                sel = wand_select(image, (x, y), params)
                covered |= sel.membership
                try:
                    desc = compute_descriptor(image, sel, model)
                except errors.RegionTooThin:
                    continue  # no texture signature; the region is unmatchable
                candidates.append(
                    CandidateRegion(site_id, face, sel, desc, image_hash)
                )
    return PropagationIndex(
        candidates=candidates,
        train_hashes=set(train),
        grid=grid,
        tolerance=tolerance,
        manifest_digest=manifest.digest(),
    )


def query(
    index: PropagationIndex,
    desc: RegionDescriptor,
    k: int = DEFAULT_TOP_K,
    tau: float = DEFAULT_TAU,
) -> list[Match]:
    """Top-k candidates by combined (mean) family cosine, descending.

    Ties keep candidate insertion order (stable sort).
    """
    matches = []
    for cand in index.candidates:
        s_hsv, s_lbp, s_emb = family_similarities(desc, cand.descriptor)
        sims = [s for s in (s_hsv, s_lbp, s_emb) if s is not None]
        combined = float(np.mean(sims))
        corroboration = sum(1 for s in sims if s >= tau)
        matches.append(Match(cand, (s_hsv, s_lbp, s_emb), combined, corroboration))
    matches.sort(key=lambda m: -m.combined)
    return matches[:k]


def propagated_record_id(source_record_id: str, candidate_id: str) -> str:
    """Deterministic id doubling as the (source, candidate) idempotency key."""
    return "prop-" + hashlib.sha256(f"{source_record_id}:{candidate_id}".encode()).hexdigest()[:24]


def propagate(
    correction: CorrectionRecord,
    source_image: ImageRaster,
    index: PropagationIndex,
    tau: float = DEFAULT_TAU,
    k: int = DEFAULT_TOP_K,
    model: ToyBackboneParams | None = None,
) -> PropagationOutcome:
    """Transfer a human correction to matching candidate regions.

    Auto-apply requires at least two descriptor families at or above tau;
    matches with some positive similarity and combined score >= 0.8 * tau
    are queued for human review; the rest are dropped. Candidates on the
    source face that overlap the corrected region are skipped so a
    correction never matches itself.
    """
    if not correction.is_human():
        raise errors.NotHumanProvenance(
            "only human corrections propagate; propagated records never cascade"
        )
    desc = compute_descriptor(source_image, correction.region, model)
    outcome = PropagationOutcome()
    for match in query(index, desc, k=k, tau=tau):
        cand = match.candidate
        if (
            cand.site_id == correction.site_id
            and cand.face == correction.face
            and (cand.selection.membership & correction.region.membership).any()
        ):
            continue
        record = CorrectionRecord(
            record_id=propagated_record_id(correction.record_id, cand.candidate_id),
            site_id=cand.site_id,
            face=cand.face,
            region=cand.selection,
            corrected_class=correction.corrected_class,
            intervention_type=correction.intervention_type,
            provenance=PropagatedProvenance(
                source_record=correction.record_id,
                family_similarities=match.sims,
                confirmed=False,
            ),
            created_at=correction.created_at,
        )
        if match.corroboration >= 2:
            outcome.auto_applied.append(record)
        elif max(s for s in match.sims if s is not None) > 0 and match.combined >= REVIEW_FLOOR_FACTOR * tau:
            outcome.review_queue.append((match, record))
    return outcome


@dataclass(frozen=True)
class LeakageFinding:
    candidate_id: str
    site_id: str
    face: str
    image_hash: str


def verify_no_leakage(
    index: PropagationIndex, manifest: DatasetManifest
) -> list[LeakageFinding]:
    """Check every candidate's image hash against the manifest train split."""
    train = manifest.train_hashes()
    return [
        LeakageFinding(c.candidate_id, c.site_id, c.face, c.image_hash)
        for c in index.candidates
        if c.image_hash not in train
    ]


# ---------------------------------------------------------------------------
# Index persistence


def _pack_str(s: str) -> bytes:
    raw = s.encode()
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(data: bytes, off: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", data, off)
    off += 2
    return data[off : off + n].decode(), off + n


def encode_index(index: PropagationIndex) -> bytes:
    out = bytearray()
    out += INDEX_MAGIC
    out += struct.pack("<I", INDEX_VERSION)
    out += bytes.fromhex(index.manifest_digest)
    out += struct.pack("<If", index.grid, index.tolerance)
    hashes = sorted(index.train_hashes)
    out += struct.pack("<I", len(hashes))
    for h in hashes:
        out += bytes.fromhex(h)
    out += struct.pack("<I", len(index.candidates))
    for cand in index.candidates:
        out += _pack_str(cand.site_id)
        out += struct.pack("<B", ALL_FACES.index(cand.face))
        out += bytes.fromhex(cand.image_hash)
        sel = cand.selection
        rle = np.asarray(sel.to_rle(), dtype="<u4")
        out += struct.pack("<III", sel.width, sel.height, rle.size)
        out += rle.tobytes()
        out += np.asarray(cand.descriptor.hsv_hist, dtype="<f4").tobytes()
        out += np.asarray(cand.descriptor.lbp_hist, dtype="<f4").tobytes()
        if cand.descriptor.embedding is not None:
            out += struct.pack("<B", 1)
            out += np.asarray(cand.descriptor.embedding, dtype="<f4").tobytes()
        else:
            out += struct.pack("<B", 0)
    return bytes(out)


def decode_index(data: bytes) -> PropagationIndex:
    if data[:4] != INDEX_MAGIC:
        raise errors.BadMagic(f"expected {INDEX_MAGIC!r}, got {data[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != INDEX_VERSION:
        raise errors.BadMagic(f"unsupported index version {version}")
    manifest_digest = data[off : off + 32].hex()
    off += 32
    grid, tolerance = struct.unpack_from("<If", data, off)
    off += 8
    (n_hashes,) = struct.unpack_from("<I", data, off)
    off += 4
    train_hashes = set()
    for _ in range(n_hashes):
        train_hashes.add(data[off : off + 32].hex())
        off += 32
    (n_cands,) = struct.unpack_from("<I", data, off)
    off += 4
    candidates = []
    for _ in range(n_cands):
        site_id, off = _unpack_str(data, off)
        (face_idx,) = struct.unpack_from("<B", data, off)
        off += 1
        image_hash = data[off : off + 32].hex()
        off += 32
        width, height, n_runs = struct.unpack_from("<III", data, off)
        off += 12
        runs = np.frombuffer(data, dtype="<u4", count=n_runs, offset=off).tolist()
        off += 4 * n_runs
        sel = RegionSelection.from_rle(width, height, runs)
        hsv = np.frombuffer(data, dtype="<f4", count=HSV_BINS, offset=off).copy()
        off += 4 * HSV_BINS
        lbp = np.frombuffer(data, dtype="<f4", count=LBP_BINS, offset=off).copy()
        off += 4 * LBP_BINS
        (has_emb,) = struct.unpack_from("<B", data, off)
        off += 1
        emb = None
        if has_emb:
            emb = np.frombuffer(data, dtype="<f4", count=EMBEDDING_DIM, offset=off).copy()
            off += 4 * EMBEDDING_DIM
        candidates.append(
            CandidateRegion(
                site_id=site_id,
                face=ALL_FACES[face_idx],
                selection=sel,
                descriptor=RegionDescriptor(hsv, lbp, emb),
                image_hash=image_hash,
            )
        )
    if off != len(data):
        raise errors.TruncatedPayload(f"{len(data) - off} trailing bytes in index")
    return PropagationIndex(
        candidates=candidates,
        train_hashes=train_hashes,
        grid=grid,
        tolerance=tolerance,
        manifest_digest=manifest_digest,
    )
