/*
 * Run-length selections, matching the server convention: row-major runs of
 * alternating membership starting with a non-member run.
 */

export function decodeRle(width: number, height: number, runs: number[]): Uint8Array {
    const total = runs.reduce((a, b) => a + b, 0);
    if (total !== width * height) {
        throw new Error(`RLE covers ${total} pixels, expected ${width * height}`);
    }
    const mask = new Uint8Array(width * height);
    let pos = 0;
    let value = 0;
    for (const run of runs) {
        if (value) mask.fill(1, pos, pos + run);
        pos += run;
        value ^= 1;
    }
    return mask;
}

export function encodeRle(width: number, height: number, mask: Uint8Array): number[] {
    if (mask.length !== width * height) {
        throw new Error("mask length does not match dimensions");
    }
    const runs: number[] = [];
    let value = 0;
    let count = 0;
    for (const px of mask) {
        const bit = px ? 1 : 0;
        if (bit === value) {
            count += 1;
        } else {
            runs.push(count);
            value = bit;
            count = 1;
        }
    }
    runs.push(count);
    return runs;
}

export function countSelected(mask: Uint8Array): number {
    let n = 0;
    for (const px of mask) if (px) n += 1;
    return n;
}

export interface OutlineSegment {
    x1: number;
    y1: number;
    x2: number;
    y2: number;
}

/*
 * Pixel-boundary outline: one unit segment per selected-pixel edge that
 * borders a non-selected pixel (or the frame). Drawn in image coordinates.
 */
export function selectionOutline(width: number, height: number, mask: Uint8Array): OutlineSegment[] {
    const at = (x: number, y: number): number =>
        x < 0 || y < 0 || x >= width || y >= height ? 0 : mask[y * width + x];
    const segments: OutlineSegment[] = [];
    for (let y = 0; y < height; y++) {
        for (let x = 0; x < width; x++) {
            if (!at(x, y)) continue;
            if (!at(x, y - 1)) segments.push({ x1: x, y1: y, x2: x + 1, y2: y });
            if (!at(x, y + 1)) segments.push({ x1: x, y1: y + 1, x2: x + 1, y2: y + 1 });
            if (!at(x - 1, y)) segments.push({ x1: x, y1: y, x2: x, y2: y + 1 });
            if (!at(x + 1, y)) segments.push({ x1: x + 1, y1: y, x2: x + 1, y2: y + 1 });
        }
    }
    return segments;
}
