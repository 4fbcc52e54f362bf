/*
 * Editor view state and its pure transitions. Interactions (clicks and wand
 * calls) are counted here and reported with each committed correction so
 * the server's effort statistics stay meaningful.
 */

import { Selection } from "./api.js";

export const CLASS_NAMES = [
    "background",
    "sky",
    "trees_plants",
    "buildings",
    "impervious",
    "pervious",
    "non_permanent",
] as const;

export const CLASS_COLORS: [number, number, number][] = [
    [0, 0, 0],
    [70, 130, 180],
    [34, 139, 34],
    [178, 34, 34],
    [128, 128, 128],
    [210, 180, 140],
    [255, 165, 0],
];

export const INTERVENTION_TYPES = [
    "feature_suppression",
    "boundary_refinement",
    "context_reweighting",
] as const;

export const MAX_TOLERANCE = 441.7;

export interface EditorViewState {
    site: string | null;
    face: string | null;
    sessionId: string | null;
    overlayAlpha: number;
    tool: "wand" | "review";
    tolerance: number;
    connectivity: 4 | 8;
    selectedClass: number;
    interventionType: string | null;
    heatmapVisible: boolean;
    selection: Selection | null;
    undoDepth: number;
    interactions: number;
    selectionStartedAt: number | null;
}

export function initialState(): EditorViewState {
    return {
        site: null,
        face: null,
        sessionId: null,
        overlayAlpha: 0.5,
        tool: "wand",
        tolerance: 30,
        connectivity: 4,
        selectedClass: 1,
        interventionType: null,
        heatmapVisible: false,
        selection: null,
        undoDepth: 0,
        interactions: 0,
        selectionStartedAt: null,
    };
}

export function setFocus(state: EditorViewState, site: string, face: string, sessionId: string): EditorViewState {
    return {
        ...initialState(),
        site,
        face,
        sessionId,
        overlayAlpha: state.overlayAlpha,
        tolerance: state.tolerance,
        connectivity: state.connectivity,
        selectedClass: state.selectedClass,
    };
}

export function setTolerance(state: EditorViewState, tolerance: number): EditorViewState {
    return { ...state, tolerance: Math.min(Math.max(tolerance, 0), MAX_TOLERANCE) };
}

export function setConnectivity(state: EditorViewState, connectivity: 4 | 8): EditorViewState {
    return { ...state, connectivity };
}

export function setClass(state: EditorViewState, classId: number): EditorViewState {
    if (classId < 0 || classId > 6 || !Number.isInteger(classId)) return state;
    return { ...state, selectedClass: classId };
}

export function setInterventionType(state: EditorViewState, t: string): EditorViewState {
    return { ...state, interventionType: t };
}

export function toggleHeatmap(state: EditorViewState): EditorViewState {
    return { ...state, heatmapVisible: !state.heatmapVisible };
}

export function recordWandResult(
    state: EditorViewState,
    selection: Selection,
    now: number,
): EditorViewState {
    return {
        ...state,
        selection,
        interactions: state.interactions + 1,
        selectionStartedAt: state.selectionStartedAt ?? now,
    };
}

export function canCommit(state: EditorViewState): boolean {
    return (
        state.sessionId !== null &&
        state.selection !== null &&
        state.selection.size > 0 &&
        state.interventionType !== null
    );
}

export function elapsedSeconds(state: EditorViewState, now: number): number {
    if (state.selectionStartedAt === null) return 0;
    return Math.max(0, (now - state.selectionStartedAt) / 1000);
}

export function afterCommit(state: EditorViewState): EditorViewState {
    return {
        ...state,
        selection: null,
        undoDepth: state.undoDepth + 1,
        interactions: 0,
        selectionStartedAt: null,
    };
}

export function afterUndo(state: EditorViewState): EditorViewState {
    return { ...state, undoDepth: Math.max(0, state.undoDepth - 1), selection: null };
}
