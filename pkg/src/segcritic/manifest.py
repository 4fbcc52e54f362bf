"""Dataset manifest: site-level splits and content hashes.

The manifest is the leakage-control anchor: images are hashed before any
feature extraction, splits are assigned per site, and the retrieval index
refuses images whose hash is not in the train split.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from segcritic import errors
from segcritic.core import ALL_FACES, CUBE_FACES, FLAT_FACE

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.70, 0.10, 0.20)


def content_hash(data: bytes) -> str:
    """256-bit digest of raw image bytes (hex)."""
    return hashlib.sha256(data).hexdigest()


@dataclass
class SiteEntry:
    site_id: str
    split: str
    faces: dict[str, str] = field(default_factory=dict)  # face -> image path
    hashes: dict[str, str] = field(default_factory=dict)  # face -> hex digest

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        for f in self.faces:
            if f not in ALL_FACES:
                raise ValueError(f"unknown face {f!r}")
        face_set = set(self.faces)
        if face_set and face_set != set(CUBE_FACES) and face_set != {FLAT_FACE}:
            raise ValueError("a site carries either all six cubemap faces or one flat face")


@dataclass
class DatasetManifest:
    sites: list[SiteEntry]

    def __post_init__(self):
        ids = [s.site_id for s in self.sites]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate site ids in manifest")

    def site(self, site_id: str) -> SiteEntry:
        for s in self.sites:
            if s.site_id == site_id:
                return s
        raise KeyError(site_id)

    def split_hashes(self, split: str) -> set[str]:
        return {
            h for s in self.sites if s.split == split for h in s.hashes.values()
        }

    def train_hashes(self) -> set[str]:
        return self.split_hashes("train")

    def to_json(self) -> dict:
        return {
            "sites": [
                {
                    "site_id": s.site_id,
                    "split": s.split,
                    "faces": dict(s.faces),
                    "hashes": dict(s.hashes),
                }
                for s in self.sites
            ]
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        return cls(
            sites=[
                SiteEntry(
                    site_id=e["site_id"],
                    split=e["split"],
                    faces=dict(e.get("faces", {})),
                    hashes=dict(e.get("hashes", {})),
                )
                for e in d["sites"]
            ]
        )

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        return cls.from_json(json.loads(path.read_text()))

    def digest(self) -> str:
        """Stable digest of the manifest content (binds indices to manifests)."""
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def split_sites(
    site_ids: Sequence[str],
    seed: int,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
) -> DatasetManifest:
    """Deterministic site-level split; remainder sites go to train.

    Counts are floor(n * ratio) for val and test; train takes the rest, so
    80 sites split 56/8/16 and 10 sites split 7/1/2.
    """
    if len(site_ids) < 3:
        raise errors.TooFewSites(f"need at least 3 sites, got {len(site_ids)}")
    if len(set(site_ids)) != len(site_ids):
        raise ValueError("site ids must be unique")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(site_ids))
    shuffled = [site_ids[i] for i in order]

    n = len(site_ids)
    n_val = int(np.floor(n * ratios[1]))
    n_test = int(np.floor(n * ratios[2]))
    n_train = n - n_val - n_test

    sites = []
    for i, sid in enumerate(shuffled):
        if i < n_train:
            split = "train"
        elif i < n_train + n_val:
            split = "val"
        else:
            split = "test"
        sites.append(SiteEntry(site_id=sid, split=split))
    sites.sort(key=lambda s: s.site_id)
    return DatasetManifest(sites=sites)


@dataclass(frozen=True)
class ManifestViolation:
    kind: str  # HashMismatch | MissingImage
    site_id: str
    face: str
    detail: str


def verify_manifest(manifest: DatasetManifest, root: Path) -> list[ManifestViolation]:
    """Recompute digests against the image store; an empty list means ok."""
    violations = []
    for site in manifest.sites:
        for face, rel in site.faces.items():
            path = root / rel
            if not path.is_file():
                violations.append(
                    ManifestViolation("MissingImage", site.site_id, face, str(rel))
                )
                continue
            digest = content_hash(path.read_bytes())
            expected = site.hashes.get(face)
            if expected is None:
                violations.append(
                    ManifestViolation("MissingHash", site.site_id, face, str(rel))
                )
            elif digest != expected:
                violations.append(
                    ManifestViolation(
                        "HashMismatch",
                        site.site_id,
                        face,
                        f"expected {expected[:12]}.., got {digest[:12]}..",
                    )
                )
    return violations
