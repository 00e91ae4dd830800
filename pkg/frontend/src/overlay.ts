/** Mask overlays: decode the server's base64 PNG payloads into drawable
 * bitmaps and blit them over the frame as tinted, semi-transparent layers.
 *
 * Bitmap creation is injected (browser: Image/createImageBitmap; tests: a
 * header-only decoder), so everything except the final pixel blit is
 * exercisable outside a browser.
 */

import type { MaskPayload } from "./types.js";
import type { Viewport } from "./coords.js";

export interface ImageLike {
  width: number;
  height: number;
}

export type BitmapFactory = (png: Uint8Array) => Promise<ImageLike>;

export interface OverlayModel {
  frame: number;
  width: number;
  height: number;
  bitmap: ImageLike;
  revision: number;
}

/** Minimal 2D-context surface the renderer needs (subset of CanvasRenderingContext2D). */
export interface Context2DLike {
  globalAlpha: number;
  drawImage(
    image: ImageLike,
    dx: number,
    dy: number,
    dw: number,
    dh: number,
  ): void;
  save(): void;
  restore(): void;
}

export function decodeBase64(data: string): Uint8Array {
  if (typeof atob === "function") {
    const binary = atob(data);
    const bytes = new Uint8Array(binary.length);
    for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
    return bytes;
  }
  const nodeBuffer = (
    globalThis as { Buffer?: { from(data: string, encoding: string): Uint8Array } }
  ).Buffer;
  if (nodeBuffer) return new Uint8Array(nodeBuffer.from(data, "base64"));
  throw new Error("no base64 decoder available");
}

const PNG_SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

/** Read width/height from a PNG's IHDR chunk. */
export function pngDimensions(bytes: Uint8Array): { width: number; height: number } {
  if (bytes.length < 24 || PNG_SIGNATURE.some((b, i) => bytes[i] !== b)) {
    throw new Error("not a PNG file");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  return { width: view.getUint32(16), height: view.getUint32(20) };
}

export async function buildOverlay(
  frame: number,
  payload: MaskPayload,
  revision: number,
  factory: BitmapFactory,
): Promise<OverlayModel> {
  const bytes = decodeBase64(payload.png_base64);
  const dims = pngDimensions(bytes);
  if (dims.width !== payload.width || dims.height !== payload.height) {
    throw new Error(
      `mask payload claims ${payload.width}x${payload.height} but PNG is ` +
        `${dims.width}x${dims.height}`,
    );
  }
  const bitmap = await factory(bytes);
  return { frame, width: dims.width, height: dims.height, bitmap, revision };
}

/** Draw one overlay aligned with the frame under the current viewport. */
export function renderOverlay(
  ctx: Context2DLike,
  overlay: OverlayModel,
  viewport: Viewport,
  opacity: number,
): void {
  ctx.save();
  ctx.globalAlpha = opacity;
  ctx.drawImage(
    overlay.bitmap,
    viewport.panX,
    viewport.panY,
    overlay.width * viewport.zoom,
    overlay.height * viewport.zoom,
  );
  ctx.restore();
}
