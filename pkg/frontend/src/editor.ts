/*
 * Canvas editor: image + server-rendered overlay + failure heatmap layers,
 * with a live selection outline. All mask math happens server-side; this
 * file only draws what the server returns.
 */

import { CriticApi, Selection } from "./api.js";
import { selectionOutline, decodeRle } from "./rle.js";
import {
    EditorViewState,
    afterCommit,
    afterUndo,
    canCommit,
    elapsedSeconds,
    recordWandResult,
} from "./state.js";

export class EditorCanvas {
    private image = new Image();
    private overlay = new Image();
    private heatmap = new Image();
    private scale = 8;

    constructor(
        private canvas: HTMLCanvasElement,
        private api: CriticApi,
        public state: EditorViewState,
        private onState: (s: EditorViewState) => void,
    ) {
        this.canvas.addEventListener("click", (e) => void this.handleClick(e));
    }

    private setState(state: EditorViewState) {
        this.state = state;
        this.onState(state);
        this.draw();
    }

    async loadFace(): Promise<void> {
        const { site, face } = this.state;
        if (!site || !face) return;
        await Promise.all([
            loadInto(this.image, this.api.imageUrl(site, face)),
            loadInto(this.overlay, this.api.overlayUrl(site, face, this.state.overlayAlpha, Date.now())),
        ]);
        if (this.state.heatmapVisible && !this.heatmap.src) {
            // fetched once per face and cached by the browser afterwards
            await loadInto(this.heatmap, this.api.failuresUrl(site, face)).catch(() => undefined);
        }
        this.canvas.width = this.image.naturalWidth * this.scale;
        this.canvas.height = this.image.naturalHeight * this.scale;
        this.draw();
    }

    async refreshOverlay(): Promise<void> {
        const { site, face } = this.state;
        if (!site || !face) return;
        await loadInto(this.overlay, this.api.overlayUrl(site, face, this.state.overlayAlpha, Date.now()));
        this.draw();
    }

    draw(): void {
        const ctx = this.canvas.getContext("2d");
        if (!ctx || !this.image.complete) return;
        ctx.imageSmoothingEnabled = false;
        ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
        ctx.drawImage(this.overlay.complete ? this.overlay : this.image, 0, 0, this.canvas.width, this.canvas.height);
        if (this.state.heatmapVisible && this.heatmap.complete && this.heatmap.src) {
            ctx.globalAlpha = 0.4;
            ctx.drawImage(this.heatmap, 0, 0, this.canvas.width, this.canvas.height);
            ctx.globalAlpha = 1.0;
        }
        if (this.state.selection) {
            this.drawOutline(ctx, this.state.selection);
        }
    }

    private drawOutline(ctx: CanvasRenderingContext2D, selection: Selection): void {
        const mask = decodeRle(selection.width, selection.height, selection.rle);
        const segments = selectionOutline(selection.width, selection.height, mask);
        ctx.strokeStyle = "#ffffff";
        ctx.lineWidth = 2;
        ctx.setLineDash([6, 4]);
        ctx.beginPath();
        for (const s of segments) {
            ctx.moveTo(s.x1 * this.scale, s.y1 * this.scale);
            ctx.lineTo(s.x2 * this.scale, s.y2 * this.scale);
        }
        ctx.stroke();
        ctx.setLineDash([]);
    }

    private async handleClick(e: MouseEvent): Promise<void> {
        if (this.state.tool !== "wand" || !this.state.sessionId) return;
        const rect = this.canvas.getBoundingClientRect();
        const x = Math.floor(((e.clientX - rect.left) / rect.width) * this.image.naturalWidth);
        const y = Math.floor(((e.clientY - rect.top) / rect.height) * this.image.naturalHeight);
        const selection = await this.api.wand(
            this.state.sessionId,
            x,
            y,
            this.state.tolerance,
            this.state.connectivity,
        );
        this.setState(recordWandResult(this.state, selection, Date.now()));
    }

    async commit(): Promise<string | null> {
        if (!canCommit(this.state)) return null;
        const result = await this.api.submitCorrection(
            this.state.sessionId!,
            this.state.selection!,
            this.state.selectedClass,
            this.state.interventionType!,
            this.state.interactions,
            elapsedSeconds(this.state, Date.now()),
        );
        this.setState(afterCommit(this.state));
        await this.refreshOverlay();
        return result.record.record_id;
    }

    async undo(): Promise<boolean> {
        if (!this.state.sessionId || this.state.undoDepth === 0) return false;
        await this.api.undo(this.state.sessionId);
        this.setState(afterUndo(this.state));
        await this.refreshOverlay();
        return true;
    }
}

function loadInto(img: HTMLImageElement, url: string): Promise<void> {
    return new Promise((resolve, reject) => {
        img.onload = () => resolve();
        img.onerror = () => reject(new Error(`failed to load ${url}`));
        img.src = url;
    });
}
