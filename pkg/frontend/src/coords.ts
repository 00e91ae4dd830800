/** Viewport <-> image-pixel mapping for box drawing.
 *
 * The canvas shows the frame scaled by `zoom` and offset by `(panX, panY)`:
 * canvas = image * zoom + pan. Drafts live in viewport coordinates while the
 * mouse is down; committing maps them to integer pixel coordinates, so the
 * same image region drawn at any zoom level commits identical boxes.
 */

import type { Box } from "./types.js";

export interface Viewport {
  zoom: number;
  panX: number;
  panY: number;
}

export interface BoxDraft {
  frame: number;
  startX: number; // viewport coordinates
  startY: number;
  endX: number;
  endY: number;
  snap: boolean; // snap to whole pixels on commit (always on in the UI)
}

export function viewportToPixel(
  viewport: Viewport,
  vx: number,
  vy: number,
): { x: number; y: number } {
  return {
    x: (vx - viewport.panX) / viewport.zoom,
    y: (vy - viewport.panY) / viewport.zoom,
  };
}

export function pixelToViewport(
  viewport: Viewport,
  x: number,
  y: number,
): { x: number; y: number } {
  return {
    x: x * viewport.zoom + viewport.panX,
    y: y * viewport.zoom + viewport.panY,
  };
}

function clamp(value: number, low: number, high: number): number {
  return Math.min(Math.max(value, low), high);
}

/**
 * Map a draft to an inclusive pixel box, clamped to the frame.
 * Returns null for zero-area drafts (a click without a drag: both corners
 * land on the same pixel).
 */
export function commitDraft(
  draft: BoxDraft,
  viewport: Viewport,
  frameSize: [number, number], // [height, width]
): Box | null {
  const [height, width] = frameSize;
  const a = viewportToPixel(viewport, draft.startX, draft.startY);
  const b = viewportToPixel(viewport, draft.endX, draft.endY);
  const round = draft.snap ? Math.round : (v: number) => v;
  const xMin = clamp(round(Math.min(a.x, b.x)), 0, width - 1);
  const xMax = clamp(round(Math.max(a.x, b.x)), 0, width - 1);
  const yMin = clamp(round(Math.min(a.y, b.y)), 0, height - 1);
  const yMax = clamp(round(Math.max(a.y, b.y)), 0, height - 1);
  if (xMin === xMax && yMin === yMax) {
    return null; // zero-area draft rejected client-side
  }
  return { xMin, yMin, xMax, yMax };
}

/** Where a committed box renders on the canvas (for the round-trip check). */
export function boxToViewportRect(
  box: Box,
  viewport: Viewport,
): { left: number; top: number; width: number; height: number } {
  const topLeft = pixelToViewport(viewport, box.xMin, box.yMin);
  // +1: inclusive pixel coordinates cover [min, max].
  return {
    left: topLeft.x,
    top: topLeft.y,
    width: (box.xMax - box.xMin + 1) * viewport.zoom,
    height: (box.yMax - box.yMin + 1) * viewport.zoom,
  };
}
