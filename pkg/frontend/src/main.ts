/*
 * Page bootstrap: wires the site picker, tool controls, class palette,
 * editor canvas, and review queue panel to the server API.
 */

import { CriticApi } from "./api.js";
import { EditorCanvas } from "./editor.js";
import { ReviewController, similarityBars } from "./review.js";
import {
    CLASS_COLORS,
    CLASS_NAMES,
    INTERVENTION_TYPES,
    initialState,
    setClass,
    setConnectivity,
    setFocus,
    setInterventionType,
    setTolerance,
    toggleHeatmap,
} from "./state.js";

const api = new CriticApi("");

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node as T;
}

async function start(): Promise<void> {
    const canvas = el<HTMLCanvasElement>("editor-canvas");
    const siteSelect = el<HTMLSelectElement>("site-select");
    const faceSelect = el<HTMLSelectElement>("face-select");
    const toleranceInput = el<HTMLInputElement>("tolerance");
    const toleranceValue = el<HTMLSpanElement>("tolerance-value");
    const connectivitySelect = el<HTMLSelectElement>("connectivity");
    const classPalette = el<HTMLDivElement>("class-palette");
    const interventionSelect = el<HTMLSelectElement>("intervention-type");
    const commitBtn = el<HTMLButtonElement>("commit-btn");
    const undoBtn = el<HTMLButtonElement>("undo-btn");
    const propagateBtn = el<HTMLButtonElement>("propagate-btn");
    const heatmapToggle = el<HTMLInputElement>("heatmap-toggle");
    const statusLine = el<HTMLDivElement>("status");
    const reviewList = el<HTMLUListElement>("review-list");
    const effortLine = el<HTMLDivElement>("effort");

    let lastRecordId: string | null = null;

    const editor = new EditorCanvas(canvas, api, initialState(), (state) => {
        commitBtn.disabled = !(state.selection && state.selection.size > 0 && state.interventionType);
        undoBtn.disabled = state.undoDepth === 0;
        statusLine.textContent = state.selection
            ? `selection: ${state.selection.size} px, ${state.interactions} interactions`
            : "click the image to select a region";
    });

    const review = new ReviewController(api, (state) => {
        reviewList.innerHTML = "";
        for (const item of state.items) {
            const li = document.createElement("li");
            const bars = similarityBars(item)
                .map((b) => `${b.family}: ${b.value === null ? "-" : b.value.toFixed(2)}`)
                .join("  ");
            li.innerHTML =
                `<span>${item.site_id}/${item.face} -> class ${item.proposed.corrected_class}</span>` +
                `<span class="sims">${bars}</span>`;
            const accept = document.createElement("button");
            accept.textContent = "accept";
            accept.onclick = async () => {
                await review.decide(item.item_id, "accept");
                await editor.refreshOverlay();
                await refreshEffort();
            };
            const reject = document.createElement("button");
            reject.textContent = "reject";
            reject.onclick = () => void review.decide(item.item_id, "reject");
            li.append(accept, reject);
            reviewList.append(li);
        }
    });

    async function refreshEffort(): Promise<void> {
        const stats = await api.effortStats();
        effortLine.textContent =
            stats.n_records === 0
                ? "no corrections yet"
                : `${stats.n_records} records, ` +
                  `${stats.mean_seconds_per_image?.toFixed(1)}s / image, ` +
                  `gain ${(stats.propagation_gain ?? 0).toFixed(2)}`;
    }

    // class palette buttons
    CLASS_NAMES.forEach((name, id) => {
        const btn = document.createElement("button");
        const [r, g, b] = CLASS_COLORS[id];
        btn.style.background = `rgb(${r},${g},${b})`;
        btn.title = name;
        btn.textContent = String(id);
        btn.onclick = () => {
            editor.state = setClass(editor.state, id);
            document
                .querySelectorAll("#class-palette button")
                .forEach((b2) => b2.classList.remove("active"));
            btn.classList.add("active");
        };
        classPalette.append(btn);
    });

    for (const t of INTERVENTION_TYPES) {
        const opt = document.createElement("option");
        opt.value = t;
        opt.textContent = t.replace("_", " ");
        interventionSelect.append(opt);
    }
    interventionSelect.onchange = () => {
        editor.state = setInterventionType(editor.state, interventionSelect.value);
        commitBtn.disabled = !(editor.state.selection && editor.state.interventionType);
    };

    toleranceInput.oninput = () => {
        editor.state = setTolerance(editor.state, Number(toleranceInput.value));
        toleranceValue.textContent = toleranceInput.value;
    };
    connectivitySelect.onchange = () => {
        editor.state = setConnectivity(editor.state, Number(connectivitySelect.value) as 4 | 8);
    };
    heatmapToggle.onchange = () => {
        editor.state = toggleHeatmap(editor.state);
        void editor.loadFace();
    };

    commitBtn.onclick = async () => {
        try {
            const recordId = await editor.commit();
            if (recordId) {
                lastRecordId = recordId;
                await refreshEffort();
            }
        } catch (err) {
            statusLine.textContent = `error: ${(err as Error).message}`;
        }
    };
    undoBtn.onclick = () => void editor.undo();
    propagateBtn.onclick = async () => {
        if (!lastRecordId) {
            statusLine.textContent = "commit a correction first";
            return;
        }
        const summary = await api.propagate(lastRecordId);
        statusLine.textContent = `propagated: ${summary.auto_applied.length} auto, ${summary.review_items.length} queued`;
        await review.refresh();
        await refreshEffort();
    };

    async function focusFace(): Promise<void> {
        const site = siteSelect.value;
        const face = faceSelect.value;
        if (!site || !face) return;
        const session = await api.openSession(site, face);
        editor.state = setFocus(editor.state, site, face, session.session_id);
        editor.state = setInterventionType(editor.state, interventionSelect.value || INTERVENTION_TYPES[0]);
        await editor.loadFace();
    }

    const sites = await api.listSites();
    for (const site of sites) {
        const opt = document.createElement("option");
        opt.value = site.site_id;
        opt.textContent = `${site.site_id} (${site.split})`;
        siteSelect.append(opt);
    }
    siteSelect.onchange = () => {
        const site = sites.find((s) => s.site_id === siteSelect.value);
        faceSelect.innerHTML = "";
        for (const face of site?.faces ?? []) {
            const opt = document.createElement("option");
            opt.value = face;
            opt.textContent = face;
            faceSelect.append(opt);
        }
        void focusFace();
    };
    faceSelect.onchange = () => void focusFace();

    if (sites.length) {
        siteSelect.value = sites[0].site_id;
        siteSelect.onchange(new Event("change"));
    }
    await review.refresh();
    await refreshEffort();
}

window.addEventListener("DOMContentLoaded", () => void start());
