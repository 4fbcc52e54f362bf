/*
 * Typed client for the correction server. The client never mutates masks
 * locally: every displayed mask state is refetched from the server.
 */

export interface SiteInfo {
    site_id: string;
    split: string;
    faces: string[];
}

export interface Selection {
    width: number;
    height: number;
    rle: number[];
    size: number;
}

export interface ProvenanceJson {
    kind: "human" | "propagated";
    interactions?: number;
    elapsed_s?: number;
    source_record?: string;
    family_similarities?: (number | null)[];
    confirmed?: boolean;
}

export interface CorrectionRecordJson {
    record_id: string;
    site_id: string;
    face: string;
    width: number;
    height: number;
    region_rle: number[];
    corrected_class: number;
    intervention_type: string;
    provenance: ProvenanceJson;
    created_at: number;
}

export interface ReviewItem {
    item_id: string;
    source_record: string;
    site_id: string;
    face: string;
    sims: (number | null)[];
    combined: number;
    corroboration: number;
    proposed: CorrectionRecordJson;
}

export interface EffortStats {
    n_records: number;
    mean_seconds_per_image?: number;
    mean_interactions_per_image?: number;
    propagation_gain?: number;
}

export interface PropagationSummary {
    source_record: string;
    auto_applied: string[];
    review_items: string[];
}

export class ApiError extends Error {
    constructor(public status: number, public code: string, message: string) {
        super(message);
    }
}

async function parseError(response: Response): Promise<ApiError> {
    let code = "Error";
    let message = response.statusText;
    try {
        const body = await response.json();
        code = body.code ?? body.detail?.code ?? code;
        message = body.message ?? JSON.stringify(body);
    } catch {
        /* non-JSON error body */
    }
    return new ApiError(response.status, code, message);
}

export class CriticApi {
    constructor(private base: string = "") {}

    private async getJson<T>(path: string): Promise<T> {
        const response = await fetch(this.base + path);
        if (!response.ok) throw await parseError(response);
        return response.json() as Promise<T>;
    }

    private async postJson<T>(path: string, body: unknown): Promise<T> {
        const response = await fetch(this.base + path, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body ?? {}),
        });
        if (!response.ok) throw await parseError(response);
        return response.json() as Promise<T>;
    }

    listSites(): Promise<SiteInfo[]> {
        return this.getJson("/api/sites");
    }

    imageUrl(site: string, face: string): string {
        return `${this.base}/api/sites/${site}/faces/${face}/image`;
    }

    overlayUrl(site: string, face: string, alpha: number, bust = 0): string {
        return `${this.base}/api/sites/${site}/faces/${face}/overlay?alpha=${alpha}&v=${bust}`;
    }

    failuresUrl(site: string, face: string): string {
        return `${this.base}/api/sites/${site}/faces/${face}/failures`;
    }

    async fetchOverlayBytes(site: string, face: string, alpha: number): Promise<ArrayBuffer> {
        const response = await fetch(this.overlayUrl(site, face, alpha, Date.now()));
        if (!response.ok) throw await parseError(response);
        return response.arrayBuffer();
    }

    openSession(site: string, face: string): Promise<{ session_id: string; mask_version: number }> {
        return this.postJson("/api/sessions", { site_id: site, face });
    }

    wand(
        sessionId: string,
        x: number,
        y: number,
        tolerance: number,
        connectivity: 4 | 8,
    ): Promise<Selection> {
        return this.postJson(`/api/sessions/${sessionId}/wand`, { x, y, tolerance, connectivity });
    }

    submitCorrection(
        sessionId: string,
        selection: Selection,
        classId: number,
        interventionType: string,
        interactions: number,
        elapsedS: number,
    ): Promise<{ record: CorrectionRecordJson; mask_version: number }> {
        return this.postJson(`/api/sessions/${sessionId}/corrections`, {
            width: selection.width,
            height: selection.height,
            rle: selection.rle,
            class_id: classId,
            intervention_type: interventionType,
            interactions,
            elapsed_s: elapsedS,
        });
    }

    undo(sessionId: string): Promise<{ undone: string; mask_version: number }> {
        return this.postJson(`/api/sessions/${sessionId}/undo`, {});
    }

    propagate(recordId: string, tau?: number, k?: number): Promise<PropagationSummary> {
        const body: Record<string, number> = {};
        if (tau !== undefined) body.tau = tau;
        if (k !== undefined) body.k = k;
        return this.postJson(`/api/propagate/${recordId}`, body);
    }

    reviewQueue(): Promise<ReviewItem[]> {
        return this.getJson("/api/review-queue");
    }

    decideReview(itemId: string, decision: "accept" | "reject"): Promise<unknown> {
        return this.postJson(`/api/review/${itemId}`, { decision });
    }

    metrics(): Promise<{ n_faces: number; miou: number | null }> {
        return this.getJson("/api/metrics");
    }

    effortStats(): Promise<EffortStats> {
        return this.getJson("/api/stats/effort");
    }
}
