"""Composite training objective and optimizer for the toy backbone.

The objective is  L_seg + lambda_cf * L_cf + lambda_prop * L_prop  plus an
L2 term coupling in weight decay. L_seg is the mean cross-entropy over
base-labeled pixels outside any corrected region (an intervention
overrides the observational label there), L_cf averages per-correction
region losses, L_prop pools all correspondence pixels retrieved by
propagation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from segcritic import errors
from segcritic.core import (
    NUM_CLASSES,
    CorrectionRecord,
    ImageRaster,
    RegionSelection,
    SegmentationMask,
)
from segcritic.model import ToyBackboneParams, featurize, forward_features


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    lambda_cf: float = 0.5
    lambda_prop: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.lambda_cf < 0 or self.lambda_prop < 0 or self.weight_decay < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class SegSupervision:
    image_ref: str
    labels: SegmentationMask
    valid: RegionSelection


@dataclass(frozen=True)
class CfSupervision:
    """One correction: region plus its corrected class."""

    image_ref: str
    region: RegionSelection
    label: int


@dataclass(frozen=True)
class CorrespondenceEntry:
    image_ref: str
    pixels: RegionSelection
    label: int


@dataclass(frozen=True)
class CorrespondenceSet:
    entries: tuple[CorrespondenceEntry, ...] = ()

    def __post_init__(self):
        for e in self.entries:
            if e.pixels.is_empty():
                raise errors.EmptyRegion("correspondence pixel set is empty")
            if not (0 <= e.label < NUM_CLASSES):
                raise errors.ClassOutOfRange(f"label {e.label} out of range")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class SupervisionBatch:
    """Feature fields plus the three supervision sources that reference them."""

    features: dict[str, np.ndarray]  # ref -> (H, W, 11)
    seg: list[SegSupervision] = field(default_factory=list)
    triples: list[CfSupervision] = field(default_factory=list)
    correspondences: CorrespondenceSet = CorrespondenceSet()

    def is_empty(self) -> bool:
        return not (self.seg or self.triples or len(self.correspondences))


def _logits_values(logits) -> np.ndarray:
    return logits.values if hasattr(logits, "values") else np.asarray(logits, dtype=np.float64)


def _pixel_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cross-entropy per pixel: logsumexp(logits) - logits[label]."""
    m = logits.max(axis=-1)
    lse = m + np.log(np.exp(logits - m[..., None]).sum(axis=-1))
    picked = np.take_along_axis(logits, labels[..., None].astype(np.int64), axis=-1)[..., 0]
    return lse - picked


def loss_seg(logits, labels, valid: RegionSelection) -> float:
    """Mean cross-entropy over the valid pixels."""
    lv = _logits_values(logits)
    lb = labels.labels if isinstance(labels, SegmentationMask) else np.asarray(labels)
    member = valid.membership
    if not member.any():
        raise errors.EmptyValidSet("no valid pixels to score")
    return float(_pixel_ce(lv[member], lb[member]).mean())


def loss_cf(logits, region: RegionSelection, y_star: int) -> float:
    """Counterfactual loss: cross-entropy toward the corrected class over
    the corrected region. Shares the loss_seg code path exactly.
    """
    if region.is_empty():
        raise errors.EmptyRegion("corrected region is empty")
    if not (0 <= y_star < NUM_CLASSES):
        raise errors.ClassOutOfRange(f"class {y_star} out of range")
    lv = _logits_values(logits)
    constant = np.full(lv.shape[:-1], y_star, dtype=np.uint8)
    return loss_seg(lv, constant, region)


def loss_prop(per_target_logits: dict[str, np.ndarray], corr: CorrespondenceSet) -> float:
    """Mean cross-entropy pooled over every correspondence pixel; an empty
    set contributes nothing.
    """
    if len(corr) == 0:
        return 0.0
    total = 0.0
    count = 0
    for entry in corr.entries:
        lv = _logits_values(per_target_logits[entry.image_ref])
        member = entry.pixels.membership
        labels = np.full(lv.shape[:-1], entry.label, dtype=np.uint8)
        total += float(_pixel_ce(lv[member], labels[member]).sum())
        count += int(member.sum())
    return total / count


def _l2(params: ToyBackboneParams) -> float:
    return float((params.flat() ** 2).sum())


@dataclass(frozen=True)
class LossBreakdown:
    seg: float
    cf: float  # weighted contribution lambda_cf * L_cf
    prop: float  # weighted contribution lambda_prop * L_prop
    wd: float

    @property
    def total(self) -> float:
        return self.seg + self.cf + self.prop + self.wd


@dataclass
class _FlatBatch:
    """Batch images stacked into one pixel matrix with per-image offsets."""

    phi: np.ndarray  # (N, 11)
    offsets: dict[str, int]

    @classmethod
    def build(cls, features: dict[str, np.ndarray]) -> "_FlatBatch":
        offsets = {}
        chunks = []
        pos = 0
        for ref in sorted(features):
            flat = features[ref].reshape(-1, features[ref].shape[-1])
            offsets[ref] = pos
            pos += flat.shape[0]
            chunks.append(flat)
        return cls(phi=np.concatenate(chunks, axis=0), offsets=offsets)

    def indices(self, ref: str, member: np.ndarray) -> np.ndarray:
        return np.flatnonzero(member.ravel()) + self.offsets[ref]


def _gather_sources(
    batch: SupervisionBatch, flat: _FlatBatch, config: TrainConfig
) -> list[tuple[np.ndarray, np.ndarray, float, str]]:
    """(pixel indices, labels, per-pixel weight, component) for every
    supervision source, with the weights that make their weighted sums add
    up to loss_total.
    """
    sources = []
    if batch.seg:
        n_pool = sum(int(s.valid.membership.sum()) for s in batch.seg)
        if n_pool == 0:
            raise errors.EmptyValidSet("no valid pixels to score")
        for s in batch.seg:
            idx = flat.indices(s.image_ref, s.valid.membership)
            labels = s.labels.labels.ravel()[np.flatnonzero(s.valid.membership.ravel())]
            sources.append((idx, labels.astype(np.int64), 1.0 / n_pool, "seg"))
    if batch.triples:
        t_count = len(batch.triples)
        for t in batch.triples:
            idx = flat.indices(t.image_ref, t.region.membership)
            labels = np.full(idx.size, t.label, dtype=np.int64)
            sources.append((idx, labels, config.lambda_cf / (t_count * idx.size), "cf"))
    if len(batch.correspondences):
        m_pool = sum(int(e.pixels.membership.sum()) for e in batch.correspondences.entries)
        for e in batch.correspondences.entries:
            idx = flat.indices(e.image_ref, e.pixels.membership)
            labels = np.full(idx.size, e.label, dtype=np.int64)
            sources.append((idx, labels, config.lambda_prop / m_pool, "prop"))
    return sources


def loss_components(
    batch: SupervisionBatch, params: ToyBackboneParams, config: TrainConfig
) -> LossBreakdown:
    wd = config.weight_decay * _l2(params) / 2.0
    if batch.is_empty() or not batch.features:
        return LossBreakdown(seg=0.0, cf=0.0, prop=0.0, wd=wd)
    flat = _FlatBatch.build(batch.features)
    logits = forward_features(params, flat.phi)
    parts = {"seg": 0.0, "cf": 0.0, "prop": 0.0}
    for idx, labels, weight, component in _gather_sources(batch, flat, config):
        parts[component] += weight * float(_pixel_ce(logits[idx], labels).sum())
    return LossBreakdown(seg=parts["seg"], cf=parts["cf"], prop=parts["prop"], wd=wd)


def loss_total(
    batch: SupervisionBatch, params: ToyBackboneParams, config: TrainConfig
) -> float:
    return loss_components(batch, params, config).total


def grad(
    params: ToyBackboneParams, batch: SupervisionBatch, config: TrainConfig
) -> ToyBackboneParams:
    """Analytic gradient of loss_total with respect to all parameters."""
    if batch.is_empty() or not batch.features:
        wd = config.weight_decay
        return ToyBackboneParams(
            wd * params.w1, wd * params.b1, wd * params.w2, wd * params.b2
        )
    flat = _FlatBatch.build(batch.features)
    sources = _gather_sources(batch, flat, config)

    # only pixels referenced by some supervision source contribute
    touched = np.unique(np.concatenate([idx for idx, _, _, _ in sources]))
    remap = np.empty(flat.phi.shape[0], dtype=np.int64)
    remap[touched] = np.arange(touched.size)

    phi = flat.phi[touched]
    hid = np.tanh(phi @ params.w1.T + params.b1)
    logits = hid @ params.w2.T + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)

    dlogits = np.zeros_like(logits)
    for idx, labels, weight, _ in sources:
        # indices within one source are unique, so fancy-index updates are safe
        local = remap[idx]
        dlogits[local] += weight * probs[local]
        dlogits[local, labels] -= weight

    dw2 = dlogits.T @ hid
    db2 = dlogits.sum(axis=0)
    dhid = (dlogits @ params.w2) * (1.0 - hid * hid)
    dw1 = dhid.T @ phi
    db1 = dhid.sum(axis=0)

    if config.weight_decay:
        dw1 += config.weight_decay * params.w1
        db1 += config.weight_decay * params.b1
        dw2 += config.weight_decay * params.w2
        db2 += config.weight_decay * params.b2
    return ToyBackboneParams(dw1, db1, dw2, db2)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), t=0)


def adam_step(
    params: ToyBackboneParams,
    grads: ToyBackboneParams,
    state: AdamState,
    config: TrainConfig,
) -> tuple[ToyBackboneParams, AdamState]:
    """One bias-corrected Adam update."""
    g = grads.flat()
    t = state.t + 1
    m = config.beta1 * state.m + (1 - config.beta1) * g
    v = config.beta2 * state.v + (1 - config.beta2) * g * g
    m_hat = m / (1 - config.beta1**t)
    v_hat = v / (1 - config.beta2**t)
    theta = params.flat() - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return ToyBackboneParams.from_flat(theta), AdamState(m=m, v=v, t=t)


@dataclass(frozen=True)
class LabeledImage:
    ref: str
    image: ImageRaster
    labels: Optional[SegmentationMask] = None


def build_supervision(
    dataset: list[LabeledImage],
    records: list[CorrectionRecord],
    correspondences: CorrespondenceSet,
    features: dict[str, np.ndarray] | None = None,
) -> SupervisionBatch:
    """Assemble the three supervision sources from a dataset and its
    applied corrections.

    Corrected pixels (from any record or correspondence) are carved out of
    the base-label valid sets: the intervention replaces the observational
    label there. Human records feed L_cf; the correspondence set feeds
    L_prop.
    """
    if features is None:
        features = {s.ref: featurize(s.image) for s in dataset}
    by_ref = {s.ref: s for s in dataset}

    corrected: dict[str, np.ndarray] = {}

    def mark(ref: str, member: np.ndarray):
        if ref in corrected:
            corrected[ref] = corrected[ref] | member
        else:
            corrected[ref] = member.copy()

    triples = []
    for rec in records:
        ref = f"{rec.site_id}/{rec.face}"
        if ref not in by_ref:
            continue
        mark(ref, rec.region.membership)
        if rec.is_human():
            triples.append(CfSupervision(ref, rec.region, rec.corrected_class))
    kept_entries = []
    for entry in correspondences.entries:
        if entry.image_ref not in by_ref:
            continue
        mark(entry.image_ref, entry.pixels.membership)
        kept_entries.append(entry)

    seg = []
    for sample in dataset:
        if sample.labels is None:
            continue
        valid = np.ones(sample.labels.labels.shape, dtype=bool)
        if sample.ref in corrected:
            valid &= ~corrected[sample.ref]
        if valid.any():
            seg.append(SegSupervision(sample.ref, sample.labels, RegionSelection(valid)))

    return SupervisionBatch(
        features=features,
        seg=seg,
        triples=triples,
        correspondences=CorrespondenceSet(tuple(kept_entries)),
    )


def correspondences_from_records(
    records: list[CorrectionRecord],
) -> CorrespondenceSet:
    """Build the L_prop pixel-correspondence set from applied propagated
    records (auto-applied plus human-confirmed ones).
    """
    entries = []
    for rec in records:
        if rec.is_human():
            continue
        entries.append(
            CorrespondenceEntry(
                image_ref=f"{rec.site_id}/{rec.face}",
                pixels=rec.region,
                label=rec.corrected_class,
            )
        )
    return CorrespondenceSet(tuple(entries))


def finetune(
    params0: ToyBackboneParams,
    dataset: list[LabeledImage],
    records: list[CorrectionRecord],
    correspondences: CorrespondenceSet,
    config: TrainConfig,
) -> tuple[ToyBackboneParams, list[dict]]:
    """Deterministic minibatch Adam on the composite objective.

    Every batch mixes whatever supervision kinds its images carry. The log
    has one entry per epoch with the weighted component losses evaluated on
    the full supervision set.
    """
    features = {s.ref: featurize(s.image) for s in dataset}
    full = build_supervision(dataset, records, correspondences, features)
    if full.is_empty():
        raise errors.NoSupervision("no labeled pixels, corrections, or correspondences")

    seg_by_ref = {s.image_ref: s for s in full.seg}
    triples_by_ref: dict[str, list[CfSupervision]] = {}
    for t in full.triples:
        triples_by_ref.setdefault(t.image_ref, []).append(t)
    corr_by_ref: dict[str, list[CorrespondenceEntry]] = {}
    for e in full.correspondences.entries:
        corr_by_ref.setdefault(e.image_ref, []).append(e)

    refs = sorted(
        set(seg_by_ref) | set(triples_by_ref) | set(corr_by_ref)
    )
    params = params0.copy()
    state = AdamState.zeros(params.flat().size)
    rng = np.random.default_rng(config.seed)
    log: list[dict] = []

    for epoch in range(config.epochs):
        order = [refs[i] for i in rng.permutation(len(refs))]
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            batch = SupervisionBatch(
                features={r: features[r] for r in chunk},
                seg=[seg_by_ref[r] for r in chunk if r in seg_by_ref],
                triples=[t for r in chunk for t in triples_by_ref.get(r, [])],
                correspondences=CorrespondenceSet(
                    tuple(e for r in chunk for e in corr_by_ref.get(r, []))
                ),
            )
            if batch.is_empty():
                continue
            g = grad(params, batch, config)
            params, state = adam_step(params, g, state, config)
        comps = loss_components(full, params, config)
        log.append(
            {
                "epoch": epoch,
                "seg": comps.seg,
                "cf": comps.cf,
                "prop": comps.prop,
                "wd": comps.wd,
                "total": comps.total,
            }
        )
    return params, log
