"""HTTP session service over a store.

Thin JSON/PNG layer: every mutation appends to the store's record log and
every displayed mask state is re-read from the store, so the browser client
never does mask math locally.
"""

from __future__ import annotations

import io
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from segcritic import errors
from segcritic.core import NUM_CLASSES, DEFAULT_TAXONOMY, HumanProvenance, RegionSelection
from segcritic.formats import colorize, encode_image_png
from segcritic.core import ImageRaster
from segcritic.maskops import softmax
from segcritic.failures import entropy_map
from segcritic.metrics import SessionLog, confusion_matrix, effort_stats, miou, propagation_gain
from segcritic.regions import WandParams, wand_select
from segcritic.store import Store

_ERROR_STATUS = {
    "SeedOutOfBounds": 422,
    "EmptySelection": 422,
    "ClassOutOfRange": 422,
    "DimensionMismatch": 422,
    "LabelOutOfRange": 422,
    "NotHumanProvenance": 409,
    "AlreadyDecided": 409,
    "EmptyLog": 404,
    "BadStore": 409,
    "LeakageViolation": 409,
}


@dataclass
class Session:
    session_id: str
    site_id: str
    face: str
    undo_stack: list[str] = field(default_factory=list)


class SessionRequest(BaseModel):
    site_id: str
    face: str


class WandRequest(BaseModel):
    x: int
    y: int
    tolerance: float = 30.0
    connectivity: int = 4


class CorrectionRequest(BaseModel):
    width: int
    height: int
    rle: list[int]
    class_id: int
    intervention_type: str
    interactions: int = 1
    elapsed_s: float = 0.0


class PropagateRequest(BaseModel):
    tau: float = 0.85
    k: Optional[int] = None


class ReviewRequest(BaseModel):
    decision: str = Field(pattern="^(accept|reject)$")


def _png_response(data: bytes) -> Response:
    return Response(content=data, media_type="image/png")


def _selection_json(sel: RegionSelection) -> dict:
    return {
        "width": sel.width,
        "height": sel.height,
        "rle": sel.to_rle(),
        "size": sel.size,
    }


def create_app(store_root: Path, overlay_alpha: float = 0.5, static_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="segcritic", version="0.1.0")
    store = Store.open(Path(store_root))
    sessions: dict[str, Session] = {}

    @app.exception_handler(errors.SegcriticError)
    async def _segcritic_error(request: Request, exc: errors.SegcriticError):
        status = _ERROR_STATUS.get(exc.code, 400)
        return JSONResponse(status_code=status, content={"code": exc.code, "message": str(exc)})

    @app.exception_handler(KeyError)
    async def _key_error(request: Request, exc: KeyError):
        return JSONResponse(status_code=404, content={"code": "NotFound", "message": str(exc)})

    def _check_face(site_id: str, face: str):
        try:
            entry = store.manifest.site(site_id)
        except KeyError:
            raise KeyError(f"unknown site {site_id}")
        if face not in entry.faces:
            raise KeyError(f"unknown face {face} for site {site_id}")

    @app.get("/api/sites")
    def list_sites():
        return [
            {"site_id": s.site_id, "split": s.split, "faces": sorted(s.faces)}
            for s in store.manifest.sites
        ]

    @app.get("/api/sites/{site_id}/faces/{face}/image")
    def face_image(site_id: str, face: str):
        _check_face(site_id, face)
        return _png_response(store.image_path(site_id, face).read_bytes())

    @app.get("/api/sites/{site_id}/faces/{face}/prediction")
    def face_prediction(site_id: str, face: str):
        _check_face(site_id, face)
        version, mask = store.current_mask(site_id, face)
        data = encode_image_png(colorize(mask))
        return Response(
            content=data, media_type="image/png", headers={"X-Mask-Version": str(version)}
        )

    @app.get("/api/sites/{site_id}/faces/{face}/overlay")
    def face_overlay(site_id: str, face: str, alpha: float | None = None):
        _check_face(site_id, face)
        a = overlay_alpha if alpha is None else min(max(alpha, 0.0), 1.0)
        version, mask = store.current_mask(site_id, face)
        image = store.image(site_id, face)
        color = colorize(mask)
        blend = (
            image.pixels.astype(np.float64) * (1 - a)
            + color.pixels.astype(np.float64) * a
        )
        out = ImageRaster(np.clip(np.round(blend), 0, 255).astype(np.uint8))
        return Response(
            content=encode_image_png(out),
            media_type="image/png",
            headers={"X-Mask-Version": str(version)},
        )

    @app.get("/api/sites/{site_id}/faces/{face}/failures")
    def face_failures(site_id: str, face: str):
        _check_face(site_id, face)
        score_path = store.root / "scores" / site_id / f"{face}.segf"
        if score_path.is_file():
            from segcritic.formats import decode_scoremap

            scores = decode_scoremap(score_path.read_bytes())
        else:
            logits = store.logits(site_id, face)
            if logits is None:
                raise errors.BadStore(f"no scores or logits for {site_id}/{face}")
            scores = entropy_map(softmax(logits)).values
        peak = float(scores.max()) or 1.0
        norm = scores / peak
        heat = np.zeros(scores.shape + (3,), dtype=np.uint8)
        heat[..., 0] = np.round(255 * norm)
        heat[..., 2] = np.round(255 * (1.0 - norm) * 0.5)
        return _png_response(encode_image_png(ImageRaster(heat)))

    @app.post("/api/sessions")
    def open_session(req: SessionRequest):
        _check_face(req.site_id, req.face)
        session = Session(session_id=uuid.uuid4().hex[:16], site_id=req.site_id, face=req.face)
        sessions[session.session_id] = session
        version, _ = store.current_mask(req.site_id, req.face)
        return {
            "session_id": session.session_id,
            "site_id": session.site_id,
            "face": session.face,
            "mask_version": version,
        }

    def _session(session_id: str) -> Session:
        if session_id not in sessions:
            raise KeyError(f"unknown session {session_id}")
        return sessions[session_id]

    @app.post("/api/sessions/{session_id}/wand")
    def wand(session_id: str, req: WandRequest):
        session = _session(session_id)
        image = store.image(session.site_id, session.face)
        params = WandParams(tolerance=req.tolerance, connectivity=req.connectivity)
        sel = wand_select(image, (req.x, req.y), params)
        return _selection_json(sel)

    @app.post("/api/sessions/{session_id}/corrections")
    def submit_correction(session_id: str, req: CorrectionRequest):
        session = _session(session_id)
        if not (0 <= req.class_id < NUM_CLASSES):
            raise errors.ClassOutOfRange(f"class {req.class_id} out of range")
        sel = RegionSelection.from_rle(req.width, req.height, req.rle)
        record = store.apply_record(
            session.site_id,
            session.face,
            sel,
            req.class_id,
            req.intervention_type,
            HumanProvenance(interactions=req.interactions, elapsed_s=req.elapsed_s),
            session_id=session.session_id,
        )
        session.undo_stack.append(record.record_id)
        version, _ = store.current_mask(session.site_id, session.face)
        return {"record": record.to_json(), "mask_version": version}

    @app.post("/api/sessions/{session_id}/undo")
    def undo(session_id: str):
        session = _session(session_id)
        if not session.undo_stack:
            raise errors.AlreadyDecided("nothing to undo in this session")
        record_id = session.undo_stack[-1]
        version = store.undo(record_id)  # raises if another session built on top
        session.undo_stack.pop()
        return {"undone": record_id, "mask_version": version}

    @app.post("/api/propagate/{record_id}")
    def run_propagation(record_id: str, req: PropagateRequest | None = None):
        req = req or PropagateRequest()
        if not store.index_path().is_file():
            store.build_propagation_index()
        return store.run_propagation(record_id, tau=req.tau, k=req.k)

    @app.get("/api/review-queue")
    def review_queue():
        return [item.to_json() for item in store.pending_reviews()]

    @app.post("/api/review/{item_id}")
    def review(item_id: str, req: ReviewRequest):
        record = store.decide_review(item_id, accept=req.decision == "accept")
        return {
            "item_id": item_id,
            "decision": req.decision,
            "record": record.to_json() if record else None,
        }

    @app.get("/api/metrics")
    def metrics():
        total = None
        rows = []
        for entry in store.manifest.sites:
            for face in entry.faces:
                gt = store.gt_mask(entry.site_id, face)
                state = store.faces.get((entry.site_id, face))
                if gt is None or state is None or state.mask is None:
                    continue
                cm = confusion_matrix(state.mask, gt)
                total = cm if total is None else total + cm
                rows.append({"site_id": entry.site_id, "face": face, "split": entry.split})
        if total is None:
            return {"n_faces": 0, "miou": None, "per_class": {}}
        per_class, mean = miou(total)
        return {
            "n_faces": len(rows),
            "miou": mean,
            "per_class": {
                name: per_class[i] for i, name in enumerate(DEFAULT_TAXONOMY.names)
            },
        }

    @app.get("/api/stats/effort")
    def stats_effort():
        log = SessionLog(events=store.events())
        corrections = log.corrections()
        if not corrections:
            return {"n_records": 0}
        seconds, interactions = effort_stats(log)
        return {
            "n_records": len(corrections),
            "mean_seconds_per_image": seconds,
            "mean_interactions_per_image": interactions,
            "propagation_gain": propagation_gain(log),
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    app.state.store = store
    app.state.sessions = sessions
    return app


def serve(store_root: Path, host: str = "127.0.0.1", port: int = 8008, static_dir: Path | None = None):
    """Run the HTTP service (blocking)."""
    import uvicorn

    app = create_app(store_root, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
