/** Timeline markers for gated (low-agreement) frames.
 *
 * Markers are a direct projection of the server's agreement records; the
 * client never recomputes IoU or the gate.
 */

import type { AgreementRecord } from "./types.js";

export interface TimelineMarker {
  frame: number;
  iou: number;
  action: string;
}

export function markersFromAgreement(records: AgreementRecord[]): TimelineMarker[] {
  return records
    .filter((record) => record.gated)
    .map((record) => ({ frame: record.frame, iou: record.iou, action: record.action }));
}
