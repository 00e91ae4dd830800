/** Client-side session/viewer state.
 *
 * Invariant: displayed overlays always belong to the displayed revision.
 * Responses tagged with an older revision than the state has seen are
 * discarded; adopting a newer revision drops every cached overlay from
 * before it. At most one mutating request is in flight per session.
 */

import type { AgreementRecord } from "./types.js";
import type { OverlayModel } from "./overlay.js";
import { markersFromAgreement, type TimelineMarker } from "./timeline.js";

export interface LayerToggles {
  forward: boolean;
  backward: boolean;
  final: boolean;
}

export class ViewerState {
  currentFrame = 0;
  overlayOpacity = 0.5;
  layers: LayerToggles = { forward: true, backward: false, final: true };
  revision = 0;
  agreement: AgreementRecord[] = [];
  private overlays = new Map<number, OverlayModel>();
  private mutationInFlight = false;

  constructor(public readonly numFrames: number) {}

  /** Adopt a response revision; stale data (older revision) is rejected. */
  observeRevision(revision: number): boolean {
    if (revision < this.revision) return false;
    if (revision > this.revision) {
      // Everything cached belongs to an older revision now.
      this.overlays.clear();
      this.revision = revision;
    }
    return true;
  }

  applyOverlay(overlay: OverlayModel): boolean {
    if (!this.observeRevision(overlay.revision)) return false;
    this.overlays.set(overlay.frame, overlay);
    return true;
  }

  overlayFor(frame: number): OverlayModel | undefined {
    return this.overlays.get(frame);
  }

  overlayCount(): number {
    return this.overlays.size;
  }

  applyAgreement(records: AgreementRecord[], revision: number): boolean {
    if (!this.observeRevision(revision)) return false;
    this.agreement = records;
    return true;
  }

  timelineMarkers(): TimelineMarker[] {
    return markersFromAgreement(this.agreement);
  }

  setFrame(frame: number): void {
    this.currentFrame = Math.min(Math.max(frame, 0), this.numFrames - 1);
  }

  /** Frames to prefetch around the current one (current first, then the
   * +/- radius window in distance order). */
  preloadFrames(radius = 5): number[] {
    const frames: number[] = [];
    for (let offset = 0; offset <= radius; offset++) {
      for (const candidate of offset === 0
        ? [this.currentFrame]
        : [this.currentFrame + offset, this.currentFrame - offset]) {
        if (candidate >= 0 && candidate < this.numFrames) frames.push(candidate);
      }
    }
    return frames;
  }

  /** Single-writer guard: returns false while a mutation is outstanding. */
  beginMutation(): boolean {
    if (this.mutationInFlight) return false;
    this.mutationInFlight = true;
    return true;
  }

  endMutation(): void {
    this.mutationInFlight = false;
  }
}

/** Warning surfaced when seeding without any committed boxes: the server
 * falls back to the whole-image box. */
export function seedWarning(boxCount: number): string | null {
  if (boxCount > 0) return null;
  return "No boxes drawn: seeding with the whole-image box.";
}
