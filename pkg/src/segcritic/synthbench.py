"""Synthetic spurious-correlation bench.

Generates a biased training set where every blue pixel is labeled sky,
including planted blue "brick" and "awning" patches that are really
buildings, plus an out-of-distribution set where the same patches carry
their true labels. Brick patches are near-clones of a designated source
region (descriptor similarity verified >= 0.97 at generation) so a single
correction can propagate to all of them; awning patches are a second,
descriptor-distant family (< 0.7 against the source) that needs individual
corrections.

Patch patterns are phase-locked to local coordinates and wrapped in a
1-pixel dark frame, which pins the LBP signature regardless of placement
and keeps the magic wand from bleeding into the surroundings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from segcritic import errors
from segcritic.colorspace import rgb_to_hsv
from segcritic.core import (
    CorrectionRecord,
    HumanProvenance,
    ImageRaster,
    RegionSelection,
    SegmentationMask,
)
from segcritic.descriptors import RegionDescriptor, compute_descriptor, family_similarities
from segcritic.formats import encode_image_png
from segcritic.manifest import DatasetManifest, SiteEntry, content_hash
from segcritic.model import ToyBackboneParams, featurize, forward_features, init_params
from segcritic.propagation import PropagationIndex, build_index, propagate
from segcritic.training import (
    CorrespondenceSet,
    LabeledImage,
    TrainConfig,
    correspondences_from_records,
    finetune,
)

SKY_CLASS = 1
BUILDING_CLASS = 3
IMPERVIOUS_CLASS = 4
PERVIOUS_CLASS = 5

SKY_COLOR = (120, 180, 240)
GRAY_LIGHT = (128, 128, 128)
GRAY_DARK = (100, 100, 100)
GROUND_COLOR = (150, 100, 60)
MID_COLOR = (110, 150, 80)
FRAME_COLOR = (10, 12, 15)

BRICK_BASE = (45, 100, 215)
BRICK_LEVELS = (0.78, 0.89, 1.0)  # vertical 3-level stripes by local x % 3
AWNING_BASE = (70, 70, 200)
AWNING_LEVELS = (0.82, 0.91, 1.0)  # horizontal 3-level stripes by local y % 3

PATCH_SIZE = 12  # textured area; the frame adds one pixel on each side

CLONE_SIM_FLOOR = 0.97
DISTRACTOR_SIM_CEIL = 0.70


@dataclass(frozen=True)
class BiasSpec:
    """Parameters of the planted "blue means sky" bias.

    ``clone_rate`` is the fraction of training images carrying a near-clone
    of the designated source region; ``n_other`` images carry an awning
    patch that only individual human corrections can fix.
    """

    seed: int
    n_train: int = 60
    n_ood: int = 12
    size: int = 48
    clone_rate: float = 21 / 60
    n_other: int = 9
    n_val: int = 2

    def __post_init__(self):
        n_clones = round(self.clone_rate * self.n_train)
        if 1 + n_clones + self.n_other > self.n_train:
            raise ValueError("not enough training images for the planted regions")
        if self.size < 44:
            raise ValueError("scenes need at least 44x44 pixels")

    @property
    def n_clones(self) -> int:
        return round(self.clone_rate * self.n_train)


@dataclass(frozen=True)
class PlantedRegion:
    site_id: str
    face: str
    kind: str  # source | clone | other | ood
    family: str  # brick | awning
    region: RegionSelection
    brightness: float
    true_class: int = BUILDING_CLASS


@dataclass(frozen=True)
class SynthImage:
    site_id: str
    face: str
    image: ImageRaster
    labels: SegmentationMask  # biased base labels (train) / ground truth (ood)
    gt: SegmentationMask
    png: bytes

    @property
    def ref(self) -> str:
        return f"{self.site_id}/{self.face}"


@dataclass
class SynthDataset:
    spec: BiasSpec
    train: list[SynthImage]
    val: list[SynthImage]
    ood: list[SynthImage]
    registry: list[PlantedRegion]
    manifest: DatasetManifest
    source: PlantedRegion
    source_descriptor: RegionDescriptor

    def train_image_iter(self):
        for s in self.train:
            yield s.site_id, s.face, s.image, content_hash(s.png)

    def find(self, kind: str) -> list[PlantedRegion]:
        return [r for r in self.registry if r.kind == kind]


def _level_color(base: tuple[int, int, int], factor: float) -> np.ndarray:
    return np.round(np.asarray(base, dtype=np.float64) * factor).astype(np.uint8)


def _stamp_patch(
    canvas: np.ndarray, x0: int, y0: int, brightness: float, family: str
) -> np.ndarray:
    """Draw a framed patch with its top-left frame corner at (x0, y0);
    returns the boolean mask of the textured (frame-excluded) area.
    """
    side = PATCH_SIZE + 2
    canvas[y0 : y0 + side, x0 : x0 + side] = FRAME_COLOR
    if family == "brick":
        base, levels, vertical = BRICK_BASE, BRICK_LEVELS, True
    else:
        base, levels, vertical = AWNING_BASE, AWNING_LEVELS, False
    for local in range(PATCH_SIZE):
        color = _level_color(base, levels[local % 3] * brightness)
        if vertical:
            canvas[y0 + 1 : y0 + 1 + PATCH_SIZE, x0 + 1 + local] = color
        else:
            canvas[y0 + 1 + local, x0 + 1 : x0 + 1 + PATCH_SIZE] = color
    mask = np.zeros(canvas.shape[:2], dtype=bool)
    mask[y0 + 1 : y0 + 1 + PATCH_SIZE, x0 + 1 : x0 + 1 + PATCH_SIZE] = True
    return mask


def _base_scene(rng: np.random.Generator, size: int):
    """Sky band, striped gray building, smooth mid band and ground."""
    img = np.zeros((size, size, 3), dtype=np.uint8)
    labels = np.zeros((size, size), dtype=np.uint8)

    sky_h = int(rng.integers(size // 4, size // 3 + 1))
    ground_y = size - int(rng.integers(size // 8, size // 6 + 1))

    img[:] = MID_COLOR
    labels[:] = PERVIOUS_CLASS
    img[:sky_h] = SKY_COLOR
    labels[:sky_h] = SKY_CLASS
    img[ground_y:] = GROUND_COLOR
    labels[ground_y:] = IMPERVIOUS_CLASS

    bw = int(rng.integers(14, 21))
    bx = int(rng.integers(2, size - bw - 2))
    by = sky_h + int(rng.integers(2, 7))
    stripe = np.where((np.arange(by, ground_y) % 2) == 0, 0, 1)
    block = np.where(stripe == 0, 1, 0)
    img[by:ground_y, bx : bx + bw] = np.where(
        block[:, None, None] == 1, np.uint8(GRAY_LIGHT[0]), np.uint8(GRAY_DARK[0])
    )
    labels[by:ground_y, bx : bx + bw] = BUILDING_CLASS
    return img, labels, sky_h, ground_y


def _patch_slot(rng, size, sky_h, ground_y, x_lo, x_hi):
    side = PATCH_SIZE + 2
    y0 = int(rng.integers(sky_h + 1, ground_y - side))
    x0 = int(rng.integers(x_lo, x_hi))
    return x0, y0


def _make_synth_image(
    site_id: str,
    face: str,
    rng: np.random.Generator,
    size: int,
    patches: list[tuple[str, float]],  # (family, brightness)
    biased: bool,
) -> tuple[SynthImage, list[np.ndarray]]:
    img, labels, sky_h, ground_y = _base_scene(rng, size)
    gt = labels.copy()
    masks = []
    slots = [(1, size - PATCH_SIZE - 3)]
    if len(patches) == 2:
        slots = [(1, size // 2 - PATCH_SIZE - 3), (size // 2 + 1, size - PATCH_SIZE - 3)]
    for (family, brightness), (x_lo, x_hi) in zip(patches, slots):
        x0, y0 = _patch_slot(rng, size, sky_h, ground_y, x_lo, x_hi)
        side = PATCH_SIZE + 2
        mask = _stamp_patch(img, x0, y0, brightness, family)
        frame = np.zeros_like(mask)
        frame[y0 : y0 + side, x0 : x0 + side] = True
        frame &= ~mask
        labels[frame] = 0
        gt[frame] = 0
        labels[mask] = SKY_CLASS if biased else BUILDING_CLASS
        gt[mask] = BUILDING_CLASS
        masks.append(mask)
    image = ImageRaster(img)
    synth = SynthImage(
        site_id=site_id,
        face=face,
        image=image,
        labels=SegmentationMask(labels),
        gt=SegmentationMask(gt),
        png=encode_image_png(image),
    )
    return synth, masks


def blueness(image: ImageRaster) -> np.ndarray:
    """The bias predicate: hue in [200, 260] degrees and saturation >= 0.4."""
    hsv = rgb_to_hsv(image.pixels)
    return (hsv[..., 0] >= 200.0) & (hsv[..., 0] <= 260.0) & (hsv[..., 1] >= 0.4)


def violating_mask(image: ImageRaster, gt: SegmentationMask) -> np.ndarray:
    """Pixels that are blue but whose true class is not sky."""
    return blueness(image) & (gt.labels != SKY_CLASS)


def gen_biased_dataset(spec: BiasSpec) -> SynthDataset:
    """Deterministic biased dataset plus the planted-region registry.

    Raises RuntimeError if the construction fails its own guarantees
    (bias coverage, clone similarity, distractor separation).
    """
    n_clones = spec.n_clones
    roles: list[list[tuple[str, float]]] = []
    kinds: list[Optional[tuple[str, str, float]]] = []

    clone_m = np.linspace(0.8, 1.0, n_clones) if n_clones else np.array([])
    other_m = np.linspace(0.8, 1.0, spec.n_other) if spec.n_other else np.array([])
    for i in range(spec.n_train):
        if i == 0:
            roles.append([("brick", 1.0)])
            kinds.append(("source", "brick", 1.0))
        elif i <= n_clones:
            m = float(clone_m[i - 1])
            roles.append([("brick", m)])
            kinds.append(("clone", "brick", m))
        elif i <= n_clones + spec.n_other:
            m = float(other_m[i - n_clones - 1])
            roles.append([("awning", m)])
            kinds.append(("other", "awning", m))
        else:
            roles.append([])
            kinds.append(None)

    children = np.random.SeedSequence(spec.seed).spawn(
        spec.n_train + spec.n_val + spec.n_ood
    )
    rngs = [np.random.default_rng(c) for c in children]

    train, registry = [], []
    for i in range(spec.n_train):
        site = f"train{i:03d}"
        synth, masks = _make_synth_image(site, "flat", rngs[i], spec.size, roles[i], biased=True)
        train.append(synth)
        if kinds[i] is not None:
            kind, family, m = kinds[i]
            registry.append(
                PlantedRegion(site, "flat", kind, family, RegionSelection(masks[0]), m)
            )

    val = []
    for i in range(spec.n_val):
        site = f"val{i:03d}"
        synth, _ = _make_synth_image(
            site, "flat", rngs[spec.n_train + i], spec.size, [], biased=True
        )
        val.append(synth)

    ood = []
    ood_m = np.linspace(0.8, 1.0, max(spec.n_ood, 1))
    for i in range(spec.n_ood):
        site = f"ood{i:03d}"
        m = float(ood_m[i])
        synth, masks = _make_synth_image(
            site,
            "flat",
            rngs[spec.n_train + spec.n_val + i],
            spec.size,
            [("brick", m), ("awning", float(ood_m[spec.n_ood - 1 - i]))],
            biased=False,
        )
        ood.append(synth)
        for mask, family in zip(masks, ("brick", "awning")):
            registry.append(
                PlantedRegion(site, "flat", "ood", family, RegionSelection(mask), m)
            )

    sites = []
    for group, split in ((train, "train"), (val, "val"), (ood, "test")):
        for s in group:
            sites.append(
                SiteEntry(
                    site_id=s.site_id,
                    split=split,
                    faces={s.face: f"images/{s.site_id}/{s.face}.png"},
                    hashes={s.face: content_hash(s.png)},
                )
            )
    manifest = DatasetManifest(sites=sites)

    source = registry[0]
    by_site = {s.site_id: s for s in train}
    source_desc = compute_descriptor(by_site[source.site_id].image, source.region)
    ds = SynthDataset(
        spec=spec,
        train=train,
        val=val,
        ood=ood,
        registry=registry,
        manifest=manifest,
        source=source,
        source_descriptor=source_desc,
    )
    _verify_generation(ds)
    return ds


def _verify_generation(ds: SynthDataset) -> None:
    by_site = {s.site_id: s for s in ds.train}

    for s in ds.train:
        stray = blueness(s.image) & (s.labels.labels != SKY_CLASS)
        if stray.any():
            raise RuntimeError(f"bias broken: blue non-sky pixels in {s.site_id}")

    for planted in ds.registry:
        if planted.kind not in ("clone", "other"):
            continue
        desc = compute_descriptor(by_site[planted.site_id].image, planted.region)
        s_hsv, s_lbp, _ = family_similarities(ds.source_descriptor, desc)
        if planted.kind == "clone" and min(s_hsv, s_lbp) < CLONE_SIM_FLOOR:
            raise RuntimeError(
                f"clone in {planted.site_id} too dissimilar: hsv={s_hsv:.4f} lbp={s_lbp:.4f}"
            )
        if planted.kind == "other" and max(s_hsv, s_lbp) >= DISTRACTOR_SIM_CEIL:
            raise RuntimeError(
                f"distractor in {planted.site_id} too similar: hsv={s_hsv:.4f} lbp={s_lbp:.4f}"
            )

    # archetype background regions must also stay far from the source
    probe = ds.train[-1]
    h, w = probe.image.height, probe.image.width
    for cls in (SKY_CLASS, BUILDING_CLASS, IMPERVIOUS_CLASS, PERVIOUS_CLASS):
        member = probe.labels.labels == cls
        member[0, :] = member[-1, :] = False
        member[:, 0] = member[:, -1] = False
        if member.sum() < 16:
            continue
        desc = compute_descriptor(probe.image, RegionSelection(member))
        s_hsv, s_lbp, _ = family_similarities(ds.source_descriptor, desc)
        if max(s_hsv, s_lbp) >= DISTRACTOR_SIM_CEIL:
            raise RuntimeError(f"background class {cls} too similar to the source region")


# ---------------------------------------------------------------------------
# Robustness scoring and the debias experiment


def predict_labels(params: ToyBackboneParams, image: ImageRaster) -> np.ndarray:
    logits = forward_features(params, featurize(image))
    return np.argmax(logits, axis=-1).astype(np.uint8)


def robustness_eval(
    params: ToyBackboneParams,
    ood: list[SynthImage],
    baseline_rate: float | None = None,
) -> tuple[float, Optional[float]]:
    """Error rate pooled over bias-violating pixels, plus the relative
    reduction against a baseline rate when one is supplied.
    """
    wrong = 0
    total = 0
    for s in ood:
        viol = violating_mask(s.image, s.gt)
        if not viol.any():
            continue
        pred = predict_labels(params, s.image)
        wrong += int((pred[viol] != s.gt.labels[viol]).sum())
        total += int(viol.sum())
    if total == 0:
        raise errors.NoViolatingPixels("the evaluation set has no bias-violating pixels")
    rate = wrong / total
    reduction = None
    if baseline_rate is not None and baseline_rate > 0:
        reduction = (baseline_rate - rate) / baseline_rate
    return rate, reduction


def human_records_for(ds: SynthDataset, kinds=("source", "other")) -> list[CorrectionRecord]:
    """Simulated critic corrections for the planted train regions."""
    records = []
    i = 0
    for planted in ds.registry:
        if planted.kind not in kinds:
            continue
        records.append(
            CorrectionRecord(
                record_id=f"human-{i:03d}",
                site_id=planted.site_id,
                face=planted.face,
                region=planted.region,
                corrected_class=planted.true_class,
                intervention_type="feature_suppression",
                provenance=HumanProvenance(interactions=2, elapsed_s=24.0),
                created_at=float(i),
            )
        )
        i += 1
    return records


def propagate_session(
    records: list[CorrectionRecord],
    images: dict[str, ImageRaster],
    index: PropagationIndex,
    tau: float = 0.85,
    k: int | None = None,
) -> list[CorrectionRecord]:
    """Propagate each human record in order, skipping candidates that
    overlap an already-corrected region on the same face.
    """
    applied: dict[str, np.ndarray] = {}

    def overlaps(ref: str, member: np.ndarray) -> bool:
        return ref in applied and bool((applied[ref] & member).any())

    def mark(ref: str, member: np.ndarray) -> None:
        applied[ref] = applied.get(ref, np.zeros_like(member)) | member

    for rec in records:
        mark(f"{rec.site_id}/{rec.face}", rec.region.membership)

    autos: list[CorrectionRecord] = []
    k_eff = len(index) if k is None else k
    for rec in records:
        outcome = propagate(rec, images[f"{rec.site_id}/{rec.face}"], index, tau=tau, k=k_eff)
        for auto in outcome.auto_applied:
            ref = f"{auto.site_id}/{auto.face}"
            if overlaps(ref, auto.region.membership):
                continue
            mark(ref, auto.region.membership)
            autos.append(auto)
    return autos


@dataclass
class DebiasResult:
    seed: int
    baseline_error: float
    nocf_error: float
    cfonly_error: float
    full_error: float
    relative_reduction: float
    n_human: int
    n_auto: int
    n_clones: int
    loss_log: list[dict] = field(default_factory=list)


def run_debias_experiment(
    seed: int,
    spec: BiasSpec | None = None,
    baseline_epochs: int = 25,
    finetune_epochs: int = 18,
    lr: float = 0.015,
    batch_size: int = 10,
    tau: float = 0.85,
) -> DebiasResult:
    """Full desk-scale debias run: biased baseline, simulated corrections,
    propagation, and three fine-tunes (no-cf, cf-only, cf+prop).

    The learning rate is a bench choice sized for the toy backbone; the
    composite-loss weights keep their library defaults.
    """
    if spec is None:
        spec = BiasSpec(seed=seed, size=44)
    ds = gen_biased_dataset(spec)
    dataset = [LabeledImage(s.ref, s.image, s.labels) for s in ds.train]
    images = {s.ref: s.image for s in ds.train}

    base_cfg = TrainConfig(
        lr=lr, epochs=baseline_epochs, batch_size=batch_size, seed=seed,
        lambda_cf=0.0, lambda_prop=0.0,
    )
    baseline, _ = finetune(init_params(seed), dataset, [], CorrespondenceSet(), base_cfg)
    baseline_error, _ = robustness_eval(baseline, ds.ood)

    humans = human_records_for(ds)
    index = build_index(ds.manifest, ds.train_image_iter())
    autos = propagate_session(humans, images, index, tau=tau)
    corr = correspondences_from_records(autos)

    def ft_cfg(lam_cf: float, lam_prop: float) -> TrainConfig:
        return TrainConfig(
            lr=lr, epochs=finetune_epochs, batch_size=batch_size, seed=seed + 1,
            lambda_cf=lam_cf, lambda_prop=lam_prop,
        )

    nocf, _ = finetune(baseline, dataset, humans, CorrespondenceSet(), ft_cfg(0.0, 0.0))
    cfonly, _ = finetune(baseline, dataset, humans, CorrespondenceSet(), ft_cfg(0.5, 0.0))
    full, log = finetune(baseline, dataset, humans + autos, corr, ft_cfg(0.5, 0.2))

    nocf_error, _ = robustness_eval(nocf, ds.ood)
    cfonly_error, _ = robustness_eval(cfonly, ds.ood)
    full_error, reduction = robustness_eval(full, ds.ood, baseline_rate=baseline_error)

    return DebiasResult(
        seed=seed,
        baseline_error=baseline_error,
        nocf_error=nocf_error,
        cfonly_error=cfonly_error,
        full_error=full_error,
        relative_reduction=reduction if reduction is not None else 0.0,
        n_human=len(humans),
        n_auto=len(autos),
        n_clones=ds.spec.n_clones,
        loss_log=log,
    )
