/*
 * Review queue flow: optimistic accept/reject that rolls back by refetching
 * the queue when the server reports a conflict (someone else decided first).
 */

import { ApiError, CriticApi, ReviewItem } from "./api.js";

export interface ReviewPanelState {
    items: ReviewItem[];
    pendingDecision: string | null;
}

export function initialReviewState(): ReviewPanelState {
    return { items: [], pendingDecision: null };
}

export function removeItem(state: ReviewPanelState, itemId: string): ReviewPanelState {
    return { ...state, items: state.items.filter((i) => i.item_id !== itemId) };
}

export class ReviewController {
    state: ReviewPanelState = initialReviewState();

    constructor(
        private api: CriticApi,
        private onChange: (state: ReviewPanelState) => void = () => {},
    ) {}

    private update(state: ReviewPanelState) {
        this.state = state;
        this.onChange(state);
    }

    async refresh(): Promise<ReviewPanelState> {
        const items = await this.api.reviewQueue();
        this.update({ items, pendingDecision: null });
        return this.state;
    }

    async decide(itemId: string, decision: "accept" | "reject"): Promise<boolean> {
        // optimistic: drop the item immediately, restore via refetch on 409
        this.update({ ...removeItem(this.state, itemId), pendingDecision: itemId });
        try {
            await this.api.decideReview(itemId, decision);
            this.update({ ...this.state, pendingDecision: null });
            return true;
        } catch (err) {
            if (err instanceof ApiError && err.status === 409) {
                await this.refresh();
                return false;
            }
            throw err;
        }
    }
}

export function similarityBars(item: ReviewItem): { family: string; value: number | null }[] {
    const families = ["hsv", "lbp", "embedding"];
    return families.map((family, i) => ({ family, value: item.sims[i] ?? null }));
}
