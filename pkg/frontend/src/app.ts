/** Browser wiring: canvas drawing, scrubber, timeline, and the annotation
 * workflow buttons. All decision logic lives in the other modules; this file
 * only binds them to the DOM.
 *
 * The annotation API serves prompts, masks, and agreement records; raw video
 * frames are not part of it. Pass `?frames=<base-url>` to overlay masks on
 * frames served from a static file host (`<base>/<video>/<frame>.png`);
 * otherwise masks render over a neutral checkerboard.
 */

import { ApiClient, ApiError } from "./api.js";
import {
  boxToViewportRect,
  commitDraft,
  type BoxDraft,
  type Viewport,
} from "./coords.js";
import {
  buildOverlay,
  renderOverlay,
  type BitmapFactory,
  type Context2DLike,
  type ImageLike,
} from "./overlay.js";
import type { Box } from "./types.js";
import { ViewerState, seedWarning } from "./viewer.js";

const query = new URLSearchParams(window.location.search);
const api = new ApiClient(query.get("api") ?? "");
const framesBase = query.get("frames");

const canvas = document.getElementById("viewer") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const scrubber = document.getElementById("scrubber") as HTMLInputElement;
const timeline = document.getElementById("timeline") as HTMLDivElement;
const status = document.getElementById("status") as HTMLDivElement;
const videoInput = document.getElementById("video-id") as HTMLInputElement;
const zoomSelect = document.getElementById("zoom") as HTMLSelectElement;
const opacityInput = document.getElementById("opacity") as HTMLInputElement;

const browserBitmaps: BitmapFactory = async (png) => {
  const copy = new Uint8Array(png); // detach from any pooled buffer
  return createImageBitmap(new Blob([copy.buffer], { type: "image/png" }));
};

let viewer: ViewerState | null = null;
let sessionId: string | null = null;
let frameSize: [number, number] = [0, 0];
let viewport: Viewport = { zoom: 1, panX: 0, panY: 0 };
let draft: BoxDraft | null = null;
let committedBoxes = new Map<number, Box[]>();
let frameBitmaps = new Map<number, ImageLike>();
let videoId = "";

function say(message: string, isError = false): void {
  status.textContent = message;
  status.className = isError ? "error" : "";
}

function currentBoxes(): Box[] {
  return committedBoxes.get(viewer?.currentFrame ?? 0) ?? [];
}

function redraw(): void {
  if (!viewer) return;
  const [height, width] = frameSize;
  canvas.width = width * viewport.zoom;
  canvas.height = height * viewport.zoom;

  const frameBitmap = frameBitmaps.get(viewer.currentFrame);
  if (frameBitmap) {
    ctx.drawImage(
      frameBitmap as CanvasImageSource,
      viewport.panX,
      viewport.panY,
      width * viewport.zoom,
      height * viewport.zoom,
    );
  } else {
    // Checkerboard placeholder when no frame host is configured.
    for (let y = 0; y < canvas.height; y += 16) {
      for (let x = 0; x < canvas.width; x += 16) {
        ctx.fillStyle = ((x + y) / 16) % 2 ? "#d8d8d8" : "#c0c0c0";
        ctx.fillRect(x, y, 16, 16);
      }
    }
  }

  const overlay = viewer.overlayFor(viewer.currentFrame);
  if (overlay && (viewer.layers.forward || viewer.layers.final)) {
    ctx.save();
    ctx.globalCompositeOperation = "multiply";
    // The browser-side bitmap is a real ImageBitmap; the renderer's context
    // seam is wider so tests can substitute a recording context.
    renderOverlay(
      ctx as unknown as Context2DLike, overlay, viewport, viewer.overlayOpacity,
    );
    ctx.restore();
  }

  ctx.strokeStyle = "#1b6ef3";
  ctx.lineWidth = 2;
  for (const box of currentBoxes()) {
    const rect = boxToViewportRect(box, viewport);
    ctx.strokeRect(rect.left, rect.top, rect.width, rect.height);
  }
  if (draft) {
    ctx.strokeStyle = "#f3a21b";
    ctx.strokeRect(
      Math.min(draft.startX, draft.endX),
      Math.min(draft.startY, draft.endY),
      Math.abs(draft.endX - draft.startX),
      Math.abs(draft.endY - draft.startY),
    );
  }
}

function renderTimeline(): void {
  if (!viewer) return;
  timeline.replaceChildren();
  for (let frame = 0; frame < viewer.numFrames; frame++) {
    const cell = document.createElement("button");
    cell.className = "timeline-cell";
    cell.textContent = String(frame);
    if (frame === viewer.currentFrame) cell.classList.add("current");
    cell.addEventListener("click", () => setFrame(frame));
    timeline.appendChild(cell);
  }
  for (const marker of viewer.timelineMarkers()) {
    const cell = timeline.children[marker.frame] as HTMLButtonElement;
    cell.classList.add("gated");
    cell.title = `low agreement (IoU ${marker.iou.toFixed(2)}) - click to re-predict`;
  }
}

async function loadFrameBitmap(frame: number): Promise<void> {
  if (!framesBase || frameBitmaps.has(frame)) return;
  const name = String(frame).padStart(5, "0");
  try {
    const response = await fetch(`${framesBase}/${videoId}/${name}.png`);
    if (!response.ok) return;
    const bitmap = await createImageBitmap(await response.blob());
    frameBitmaps.set(frame, bitmap);
  } catch {
    // Missing frame images only affect the backdrop.
  }
}

async function refreshOverlays(): Promise<void> {
  if (!viewer || !sessionId) return;
  for (const frame of viewer.preloadFrames(5)) {
    await loadFrameBitmap(frame);
    if (viewer.overlayFor(frame)) continue;
    try {
      const response = await api.getMask(sessionId, frame);
      const overlay = await buildOverlay(
        frame,
        response.mask,
        response.revision,
        browserBitmaps,
      );
      viewer.applyOverlay(overlay); // stale revisions are dropped here
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) return; // not propagated yet
      throw error;
    }
  }
  redraw();
}

function setFrame(frame: number): void {
  if (!viewer) return;
  viewer.setFrame(frame);
  scrubber.value = String(frame);
  renderTimeline();
  redraw();
  void refreshOverlays();
}

async function mutate(run: () => Promise<void>): Promise<void> {
  if (!viewer || !viewer.beginMutation()) {
    say("another request is in flight", true);
    return;
  }
  try {
    await run();
  } catch (error) {
    if (error instanceof ApiError && error.status === 409) {
      say(`out of date (${error.detail}); refreshing`, true);
      await refreshSession();
    } else {
      say(String(error), true);
    }
  } finally {
    viewer.endMutation();
  }
}

async function refreshSession(): Promise<void> {
  if (!viewer || !sessionId) return;
  const session = await api.getSession(sessionId);
  viewer.observeRevision(session.revision);
  viewer.applyAgreement(session.agreement, session.revision);
  renderTimeline();
  await refreshOverlays();
}

async function createSession(): Promise<void> {
  videoId = videoInput.value.trim();
  const info = await api.createSession(videoId);
  sessionId = info.session_id;
  frameSize = info.frame_size;
  viewer = new ViewerState(info.num_frames);
  viewer.observeRevision(info.revision);
  committedBoxes = new Map();
  frameBitmaps = new Map();
  scrubber.max = String(info.num_frames - 1);
  scrubber.value = "0";
  say(`session ${sessionId} on ${videoId} (${info.num_frames} frames)`);
  setFrame(0);
}

canvas.addEventListener("mousedown", (event) => {
  if (!viewer) return;
  const rect = canvas.getBoundingClientRect();
  draft = {
    frame: viewer.currentFrame,
    startX: event.clientX - rect.left,
    startY: event.clientY - rect.top,
    endX: event.clientX - rect.left,
    endY: event.clientY - rect.top,
    snap: true,
  };
});

canvas.addEventListener("mousemove", (event) => {
  if (!draft) return;
  const rect = canvas.getBoundingClientRect();
  draft.endX = event.clientX - rect.left;
  draft.endY = event.clientY - rect.top;
  redraw();
});

canvas.addEventListener("mouseup", () => {
  if (!draft || !viewer) return;
  const box = commitDraft(draft, viewport, frameSize);
  if (box === null) {
    say("zero-area box ignored", true);
  } else {
    const frame = draft.frame;
    committedBoxes.set(frame, [...(committedBoxes.get(frame) ?? []), box]);
    void mutate(async () => {
      const response = await api.putPrompts(sessionId!, frame, committedBoxes.get(frame)!);
      viewer!.observeRevision(response.revision);
      say(`committed ${committedBoxes.get(frame)!.length} box(es) on frame ${frame}`);
    });
  }
  draft = null;
  redraw();
});

(document.getElementById("create") as HTMLButtonElement).addEventListener(
  "click",
  () => void mutate(createSession),
);

(document.getElementById("clear-boxes") as HTMLButtonElement).addEventListener(
  "click",
  () => {
    if (!viewer) return;
    committedBoxes.delete(viewer.currentFrame);
    void mutate(async () => {
      const response = await api.putPrompts(sessionId!, viewer!.currentFrame, []);
      viewer!.observeRevision(response.revision);
    });
    redraw();
  },
);

(document.getElementById("seed") as HTMLButtonElement).addEventListener(
  "click",
  () =>
    void mutate(async () => {
      if (!viewer || !sessionId) return;
      const frame = viewer.currentFrame;
      const warning = seedWarning((committedBoxes.get(frame) ?? []).length);
      if (warning) say(warning, true);
      const response = await api.seed(sessionId, frame);
      viewer.observeRevision(response.revision);
      const overlay = await buildOverlay(
        frame,
        response.mask,
        response.revision,
        browserBitmaps,
      );
      viewer.applyOverlay(overlay);
      if (!warning) say(`seeded frame ${frame}`);
      redraw();
    }),
);

for (const mode of ["forward", "plus"] as const) {
  (document.getElementById(`propagate-${mode}`) as HTMLButtonElement).addEventListener(
    "click",
    () =>
      void mutate(async () => {
        if (!sessionId || !viewer) return;
        say(`propagating (${mode})...`);
        const started = await api.propagate(sessionId, mode);
        viewer.observeRevision(started.revision);
        const session = await api.waitForState(sessionId, "propagated");
        viewer.observeRevision(session.revision);
        if (mode === "plus") {
          const agreement = await api.getAgreement(sessionId);
          viewer.applyAgreement(agreement.records, agreement.revision);
        }
        say(`propagated (${mode})`);
        renderTimeline();
        await refreshOverlays();
      }),
  );
}

(document.getElementById("repredict") as HTMLButtonElement).addEventListener(
  "click",
  () =>
    void mutate(async () => {
      if (!sessionId || !viewer) return;
      const frame = viewer.currentFrame;
      const boxes = committedBoxes.get(frame) ?? [];
      const repropagate = (
        document.getElementById("repropagate") as HTMLInputElement
      ).checked;
      const response = await api.repredict(
        sessionId,
        frame,
        boxes.length ? boxes : null,
        repropagate,
      );
      viewer.observeRevision(response.revision);
      say(`re-predicted frames ${response.changed_frames.join(", ")}`);
      await refreshOverlays();
    }),
);

scrubber.addEventListener("input", () => setFrame(Number(scrubber.value)));

zoomSelect.addEventListener("change", () => {
  viewport = { ...viewport, zoom: Number(zoomSelect.value) };
  redraw();
});

opacityInput.addEventListener("input", () => {
  if (!viewer) return;
  viewer.overlayOpacity = Number(opacityInput.value);
  redraw();
});

say("enter a video id and create a session");
