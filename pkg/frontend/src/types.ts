/** Wire types mirror the server's JSON (snake_case preserved). */

export interface Box {
  xMin: number;
  yMin: number;
  xMax: number;
  yMax: number;
}

export interface SessionInfo {
  session_id: string;
  revision: number;
  state: string;
  num_frames: number;
  frame_size: [number, number]; // [height, width]
}

export interface SessionDetail {
  id: string;
  video_id: string;
  num_frames: number;
  frame_size: [number, number];
  revision: number;
  state: string;
  prompts: Record<string, [number, number, number, number][]>;
  seed_frame: number | null;
  mode: string | null;
  agreement: AgreementRecord[];
  error: string | null;
}

export interface MaskPayload {
  png_base64: string;
  width: number;
  height: number;
}

export interface AgreementRecord {
  frame: number;
  iou: number;
  gated: boolean;
  action: string;
}

export function boxToTuple(box: Box): [number, number, number, number] {
  return [box.xMin, box.yMin, box.xMax, box.yMax];
}

export function tupleToBox(t: [number, number, number, number]): Box {
  return { xMin: t[0], yMin: t[1], xMax: t[2], yMax: t[3] };
}
