"""Command-line driver for the correction loop.

Subcommands cover the full pipeline: init, synth-gen, ingest, predict,
detect, correct (scripted), propagate, train, eval, bench, serve, export.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from segcritic import errors
from segcritic.core import (
    NUM_CLASSES,
    DEFAULT_TAXONOMY,
    HumanProvenance,
    RegionSelection,
    SegmentationMask,
)
from segcritic.failures import FlagParams, ScoreMap, entropy_map, flag_regions
from segcritic.formats import (
    decode_image_png,
    encode_bin,
    encode_colorized_png,
    encode_image_png,
    encode_indexed_png,
)
from segcritic.manifest import DatasetManifest, SiteEntry, content_hash, split_sites, verify_manifest
from segcritic.maskops import argmax_mask, softmax
from segcritic.metrics import boundary_iou, confusion_matrix, miou
from segcritic.model import init_params, predict_image
from segcritic.report import write_bench_report, write_metrics_report, write_training_report
from segcritic.store import Store
from segcritic.synthbench import (
    BiasSpec,
    gen_biased_dataset,
    predict_labels,
    robustness_eval,
    run_debias_experiment,
)
from segcritic.training import (
    CorrespondenceSet,
    LabeledImage,
    TrainConfig,
    correspondences_from_records,
    finetune,
)


class Ctx:
    def __init__(self, store: Path, seed: int, config: dict):
        self.store_path = store
        self.seed = seed
        self.config = config

    def open_store(self) -> Store:
        return Store.open(self.store_path)

    def train_config(self, **overrides) -> TrainConfig:
        # desk-scale optimizer settings; the composite-loss weights keep
        # the library defaults
        merged = {"seed": self.seed, "lr": 0.015, "epochs": 18, "batch_size": 10}
        merged.update(self.config.get("train", {}))
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig(**merged)


@click.group()
@click.option("--store", type=click.Path(path_type=Path), default=Path("store"), show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", type=click.Path(path_type=Path), default=None, help="JSON config file")
@click.pass_context
def main(ctx, store: Path, seed: int, config: Path | None):
    """Human-in-the-loop segmentation correction engine."""
    cfg = {}
    if config is not None:
        cfg = json.loads(Path(config).read_text())
    ctx.obj = Ctx(store, seed, cfg)


@main.command()
@click.pass_obj
def init(ctx: Ctx):
    """Create an empty store."""
    Store.init(ctx.store_path)
    click.echo(f"initialized store at {ctx.store_path}")


@main.command("synth-gen")
@click.option("--n-train", type=int, default=60, show_default=True)
@click.option("--n-ood", type=int, default=12, show_default=True)
@click.option("--size", type=int, default=44, show_default=True)
@click.option("--clone-rate", type=float, default=21 / 60, show_default=True)
@click.option("--n-other", type=int, default=9, show_default=True)
@click.pass_obj
def synth_gen(ctx: Ctx, n_train, n_ood, size, clone_rate, n_other):
    """Generate the biased synthetic dataset into the store."""
    spec = BiasSpec(
        seed=ctx.seed, n_train=n_train, n_ood=n_ood, size=size,
        clone_rate=clone_rate, n_other=n_other,
    )
    ds = gen_biased_dataset(spec)
    store_root = ctx.store_path
    Store.init(store_root, manifest=ds.manifest)
    for group in (ds.train, ds.val, ds.ood):
        for s in group:
            img_path = store_root / "images" / s.site_id / f"{s.face}.png"
            img_path.parent.mkdir(parents=True, exist_ok=True)
            img_path.write_bytes(s.png)
            gt_path = store_root / "gt" / s.site_id / f"{s.face}.bin"
            gt_path.parent.mkdir(parents=True, exist_ok=True)
            gt_path.write_bytes(encode_bin(s.gt))
            lb_path = store_root / "labels" / s.site_id / f"{s.face}.bin"
            lb_path.parent.mkdir(parents=True, exist_ok=True)
            lb_path.write_bytes(encode_bin(s.labels))
    registry = [
        {
            "site_id": r.site_id,
            "face": r.face,
            "kind": r.kind,
            "family": r.family,
            "width": r.region.width,
            "height": r.region.height,
            "rle": r.region.to_rle(),
            "brightness": r.brightness,
            "true_class": r.true_class,
        }
        for r in ds.registry
    ]
    (store_root / "registry.json").write_text(json.dumps(registry))
    click.echo(
        f"generated {len(ds.train)} train / {len(ds.val)} val / {len(ds.ood)} ood images "
        f"({spec.n_clones} clones, {n_other} others)"
    )


@main.command()
@click.option("--images", "images_dir", type=click.Path(path_type=Path), required=True)
@click.option("--ratios", type=str, default="0.70,0.10,0.20", show_default=True)
@click.pass_obj
def ingest(ctx: Ctx, images_dir: Path, ratios: str):
    """Import a directory of images (one file per site, or one subdirectory
    of cubemap faces per site) and assign site-level splits."""
    images_dir = Path(images_dir)
    sites: dict[str, dict[str, Path]] = {}
    for entry in sorted(images_dir.iterdir()):
        if entry.is_dir():
            faces = {
                p.stem: p for p in sorted(entry.iterdir()) if p.suffix.lower() == ".png"
            }
            if faces:
                sites[entry.name] = faces
        elif entry.suffix.lower() == ".png":
            sites[entry.stem] = {"flat": entry}
    if not sites:
        raise click.ClickException(f"no PNG images under {images_dir}")
    r = tuple(float(x) for x in ratios.split(","))
    manifest = split_sites(sorted(sites), seed=ctx.seed, ratios=r)
    store = Store.init(ctx.store_path, manifest=manifest)
    for site_entry in manifest.sites:
        for face, src in sites[site_entry.site_id].items():
            data = src.read_bytes()
            dst = ctx.store_path / "images" / site_entry.site_id / f"{face}.png"
            dst.parent.mkdir(parents=True, exist_ok=True)
            dst.write_bytes(data)
            site_entry.faces[face] = f"images/{site_entry.site_id}/{face}.png"
            site_entry.hashes[face] = content_hash(data)
    manifest.save(ctx.store_path / "manifest.json")
    click.echo(f"ingested {len(sites)} sites")


def _store_dataset(store: Store, split: str | None = None) -> list[LabeledImage]:
    out = []
    for entry in store.manifest.sites:
        if split is not None and entry.split != split:
            continue
        for face in entry.faces:
            labels = store.base_labels(entry.site_id, face)
            out.append(
                LabeledImage(
                    ref=f"{entry.site_id}/{face}",
                    image=store.image(entry.site_id, face),
                    labels=labels,
                )
            )
    return out


@main.command()
@click.option("--checkpoint", default=None, help="checkpoint name to predict with")
@click.option("--external-logits", type=click.Path(path_type=Path), default=None,
              help="directory of {site}_{face}.segl files from an external backbone")
@click.option("--baseline-epochs", type=int, default=None)
@click.pass_obj
def predict(ctx: Ctx, checkpoint, external_logits, baseline_epochs):
    """Write per-face logits and version-0 masks.

    With no checkpoint present, a baseline is first trained on the store's
    base labels (the pre-correction model).
    """
    store = ctx.open_store()
    if external_logits is not None:
        from segcritic.formats import decode_logits

        count = 0
        for entry in store.manifest.sites:
            for face in entry.faces:
                path = Path(external_logits) / f"{entry.site_id}_{face}.segl"
                if not path.is_file():
                    continue
                logits = decode_logits(path.read_bytes())
                store.save_logits(entry.site_id, face, logits)
                store.set_prediction(entry.site_id, face, argmax_mask(logits), "external")
                count += 1
        click.echo(f"ingested external logits for {count} faces")
        return

    name = checkpoint or "baseline"
    if not store.checkpoint_path(name).is_file():
        if checkpoint is not None:
            raise click.ClickException(f"checkpoint {checkpoint!r} not found")
        dataset = [s for s in _store_dataset(store, "train") if s.labels is not None]
        params = init_params(ctx.seed)
        if dataset:
            cfg = ctx.train_config(
                epochs=baseline_epochs or ctx.config.get("baseline_epochs", 25),
                lambda_cf=0.0, lambda_prop=0.0,
                lr=ctx.config.get("lr", 0.015),
            )
            params, _ = finetune(params, dataset, [], CorrespondenceSet(), cfg)
            click.echo(f"trained baseline on {len(dataset)} labeled images")
        store.save_params(name, params)

    params = store.load_params(name)
    count = 0
    for entry in store.manifest.sites:
        for face in entry.faces:
            logits = predict_image(params, store.image(entry.site_id, face))
            store.save_logits(entry.site_id, face, logits)
            store.set_prediction(entry.site_id, face, argmax_mask(logits), name)
            count += 1
    click.echo(f"predicted {count} faces with checkpoint {name!r}")


@main.command()
@click.option("--threshold", type=float, default=1.0, show_default=True)
@click.option("--min-area", type=int, default=16, show_default=True)
@click.pass_obj
def detect(ctx: Ctx, threshold, min_area):
    """Entropy-based failure maps and flagged regions for every face."""
    store = ctx.open_store()
    params = FlagParams(threshold=threshold, min_area=min_area)
    count = 0
    for entry in store.manifest.sites:
        for face in entry.faces:
            logits = store.logits(entry.site_id, face)
            if logits is None:
                continue
            score = entropy_map(softmax(logits))
            store.save_scores(entry.site_id, face, score.values.astype(np.float32))
            flags = [
                {
                    "rank": i,
                    "size": sel.size,
                    "mean_score": float(score.values[sel.membership].mean()),
                    "rle": sel.to_rle(),
                    "width": sel.width,
                    "height": sel.height,
                }
                for i, sel in enumerate(flag_regions(score, params))
            ]
            store.save_flags(entry.site_id, face, flags)
            count += 1
    click.echo(f"wrote failure maps for {count} faces")


@main.command()
@click.option("--script", "script_path", type=click.Path(path_type=Path), default=None,
              help="JSON list of corrections to apply")
@click.option("--from-registry", "n_registry", type=int, default=None,
              help="apply the first N human corrections from the synth registry")
@click.pass_obj
def correct(ctx: Ctx, script_path, n_registry):
    """Apply scripted corrections (the human stand-in)."""
    store = ctx.open_store()
    items: list[dict] = []
    if script_path is not None:
        items = json.loads(Path(script_path).read_text())
    elif n_registry is not None:
        registry = json.loads((ctx.store_path / "registry.json").read_text())
        planted = [r for r in registry if r["kind"] in ("source", "other")]
        for r in planted[:n_registry]:
            items.append(
                {
                    "site_id": r["site_id"],
                    "face": r["face"],
                    "width": r["width"],
                    "height": r["height"],
                    "rle": r["rle"],
                    "class_id": r["true_class"],
                    "intervention_type": "feature_suppression",
                    "interactions": 2,
                    "elapsed_s": 24.0,
                }
            )
    else:
        raise click.ClickException("provide --script or --from-registry")
    for item in items:
        sel = RegionSelection.from_rle(item["width"], item["height"], item["rle"])
        store.apply_record(
            item["site_id"],
            item["face"],
            sel,
            int(item["class_id"]),
            item.get("intervention_type", "boundary_refinement"),
            HumanProvenance(
                interactions=int(item.get("interactions", 1)),
                elapsed_s=float(item.get("elapsed_s", 0.0)),
            ),
        )
    click.echo(f"applied {len(items)} corrections")


@main.command()
@click.option("--record", "record_id", default=None, help="propagate one record")
@click.option("--tau", type=float, default=0.85, show_default=True)
@click.option("--k", type=int, default=None, help="top-k matches (default: whole index)")
@click.option("--grid", type=int, default=8, show_default=True)
@click.option("--tolerance", type=float, default=75.0, show_default=True)
@click.pass_obj
def propagate(ctx: Ctx, record_id, tau, k, grid, tolerance):
    """Build the train-only index if needed and propagate corrections."""
    store = ctx.open_store()
    if store.index_path().is_file():
        index = store.load_index()
    else:
        index = store.build_propagation_index(grid=grid, tolerance=tolerance)
        click.echo(f"built index with {len(index)} candidates")
    targets = [record_id] if record_id else [
        r.record_id for r in store.applied_records() if r.is_human()
    ]
    total_auto = total_review = 0
    for rid in targets:
        summary = store.run_propagation(rid, tau=tau, k=k, index=index)
        total_auto += len(summary["auto_applied"])
        total_review += len(summary["review_items"])
    click.echo(f"propagated {len(targets)} records: {total_auto} auto, {total_review} queued")


@main.command()
@click.option("--name", default=None, help="checkpoint name (default: next finetuned-NNN)")
@click.option("--from", "from_name", default="baseline", show_default=True)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--lambda-cf", type=float, default=None)
@click.option("--lambda-prop", type=float, default=None)
@click.pass_obj
def train(ctx: Ctx, name, from_name, epochs, lr, lambda_cf, lambda_prop):
    """Fine-tune the toy backbone on base labels plus applied corrections."""
    store = ctx.open_store()
    dataset = _store_dataset(store, "train")
    records = store.applied_records()
    corr = correspondences_from_records(records)
    cfg = ctx.train_config(
        epochs=epochs, lr=lr, lambda_cf=lambda_cf, lambda_prop=lambda_prop
    )
    params0 = (
        store.load_params(from_name)
        if store.checkpoint_path(from_name).is_file()
        else init_params(ctx.seed)
    )
    if cfg.epochs == 0:
        params, log = params0, []
    else:
        params, log = finetune(params0, dataset, records, corr, cfg)
    if name is None:
        n = 1
        while store.checkpoint_path(f"finetuned-{n:03d}").is_file():
            n += 1
        name = f"finetuned-{n:03d}"
    store.save_params(name, params)
    paths = write_training_report(log, store.root / "reports", name=name)
    click.echo(f"saved checkpoint {name} ({len(records)} records, {len(corr)} correspondences)")
    click.echo(f"training report: {paths['csv']}")


@main.command("eval")
@click.option("--split", default="test", show_default=True)
@click.option("--boundary-d", type=int, default=2, show_default=True)
@click.pass_obj
def eval_cmd(ctx: Ctx, split, boundary_d):
    """Score every checkpoint against ground truth; write CSV, text, and
    figures under reports/."""
    store = ctx.open_store()
    checkpoints = sorted(p.stem for p in (store.root / "checkpoints").glob("*.segw"))
    if not checkpoints:
        raise click.ClickException("no checkpoints to evaluate")
    faces = [
        (e.site_id, f)
        for e in store.manifest.sites
        if e.split == split
        for f in e.faces
        if store.gt_mask(e.site_id, f) is not None
    ]
    if not faces:
        raise click.ClickException(f"no ground truth for split {split!r}")

    registry_path = ctx.store_path / "registry.json"
    synth = registry_path.is_file()
    rows = []
    confusions = {}
    for name in checkpoints:
        params = store.load_params(name)
        total = None
        biou_vals: dict[int, list[float]] = {}
        viol_wrong = viol_total = 0
        for site, face in faces:
            gt = store.gt_mask(site, face)
            image = store.image(site, face)
            pred = SegmentationMask(predict_labels(params, image))
            cm = confusion_matrix(pred, gt)
            total = cm if total is None else total + cm
            for c in range(NUM_CLASSES):
                b = boundary_iou(pred, gt, c, d=boundary_d)
                if b is not None:
                    biou_vals.setdefault(c, []).append(b)
            if synth:
                from segcritic.synthbench import violating_mask

                viol = violating_mask(image, gt)
                viol_wrong += int((pred.labels[viol] != gt.labels[viol]).sum())
                viol_total += int(viol.sum())
        per_class, mean = miou(total)
        row = {"model": name, "split": split, "miou": mean}
        for i, cname in enumerate(DEFAULT_TAXONOMY.names):
            row[f"iou_{cname}"] = "" if per_class[i] is None else per_class[i]
        row["boundary_miou"] = float(
            np.mean([np.mean(v) for v in biou_vals.values()])
        ) if biou_vals else ""
        if synth and viol_total:
            row["violating_error"] = viol_wrong / viol_total
        rows.append(row)
        confusions[name] = total
    paths = write_metrics_report(rows, store.root / "reports", confusions)
    for row in rows:
        click.echo(f"{row['model']}: mIoU {row['miou']:.4f}")
    click.echo(f"metrics report: {paths['csv']}")


@main.command()
@click.option("--seeds", type=int, default=5, show_default=True)
@click.pass_obj
def bench(ctx: Ctx, seeds):
    """Run the debias experiment over several seeds; report mean +/- sd."""
    results = []
    for seed in range(ctx.seed, ctx.seed + seeds):
        r = run_debias_experiment(seed)
        results.append(r)
        click.echo(
            f"seed {seed}: baseline={r.baseline_error:.3f} corrected={r.full_error:.3f} "
            f"reduction={r.relative_reduction:.1%}"
        )
    out_dir = ctx.store_path / "reports" if (ctx.store_path / "manifest.json").is_file() else Path("reports")
    paths = write_bench_report(results, out_dir)
    red = np.array([r.relative_reduction for r in results])
    click.echo(f"relative reduction: {red.mean():.1%} +/- {red.std(ddof=1) if seeds > 1 else 0:.1%}")
    click.echo(f"bench report: {paths['csv']}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(path_type=Path), default=None,
              help="static directory with the browser client")
@click.pass_obj
def serve(ctx: Ctx, host, port, ui_dir):
    """Run the HTTP session service."""
    from segcritic.server import serve as _serve

    try:
        _serve(ctx.store_path, host=host, port=port, static_dir=ui_dir)
    except OSError as exc:
        raise click.ClickException(f"cannot bind {host}:{port}: {exc}")


@main.command()
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.pass_obj
def export(ctx: Ctx, out_dir: Path):
    """Export current masks in all three formats plus the manifest."""
    store = ctx.open_store()
    out_dir = Path(out_dir)
    count = 0
    for (site, face), state in sorted(store.faces.items()):
        if state.mask is None:
            continue
        d = out_dir / site
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{face}.bin").write_bytes(encode_bin(state.mask))
        (d / f"{face}.png").write_bytes(encode_indexed_png(state.mask))
        (d / f"{face}_vis.png").write_bytes(encode_colorized_png(state.mask))
        count += 1
    store.manifest.save(out_dir / "manifest.json")
    click.echo(f"exported {count} masks to {out_dir}")


if __name__ == "__main__":
    main()
