/** Typed client for the annotation service. Strictly mirrors the HTTP API;
 * every mutation returns the new session revision. */

import type {
  AgreementRecord,
  Box,
  MaskPayload,
  SessionDetail,
  SessionInfo,
} from "./types.js";
import { boxToTuple } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const parsed = (await response.json()) as { detail?: unknown };
        if (parsed.detail !== undefined) detail = JSON.stringify(parsed.detail);
      } catch {
        // keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  createSession(videoId: string): Promise<SessionInfo> {
    return this.request("POST", "/sessions", { video_id: videoId });
  }

  getSession(sessionId: string): Promise<SessionDetail> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  putPrompts(
    sessionId: string,
    frame: number,
    boxes: Box[],
  ): Promise<{ revision: number; state: string }> {
    return this.request("PUT", `/sessions/${sessionId}/prompts/${frame}`, {
      boxes: boxes.map(boxToTuple),
    });
  }

  seed(
    sessionId: string,
    frame: number,
  ): Promise<{ revision: number; state: string; frame: number; mask: MaskPayload }> {
    return this.request("POST", `/sessions/${sessionId}/seed`, { frame });
  }

  propagate(
    sessionId: string,
    mode: "forward" | "plus",
  ): Promise<{ revision: number; state: string }> {
    return this.request("POST", `/sessions/${sessionId}/propagate`, { mode });
  }

  getMask(
    sessionId: string,
    frame: number,
  ): Promise<{ revision: number; frame: number; mask: MaskPayload }> {
    return this.request("GET", `/sessions/${sessionId}/masks/${frame}`);
  }

  getAgreement(
    sessionId: string,
  ): Promise<{ revision: number; records: AgreementRecord[] }> {
    return this.request("GET", `/sessions/${sessionId}/agreement`);
  }

  repredict(
    sessionId: string,
    frame: number,
    boxes: Box[] | null,
    repropagate: boolean,
  ): Promise<{ revision: number; state: string; changed_frames: number[] }> {
    return this.request("POST", `/sessions/${sessionId}/repredict`, {
      frame,
      boxes: boxes === null ? null : boxes.map(boxToTuple),
      repropagate,
    });
  }

  /** Poll the session until it reaches `target` (or fails). */
  async waitForState(
    sessionId: string,
    target: string,
    timeoutMs = 60_000,
    pollMs = 100,
  ): Promise<SessionDetail> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const session = await this.getSession(sessionId);
      if (session.state === target) return session;
      if (session.state === "failed") {
        throw new Error(`propagation failed: ${session.error}`);
      }
      if (Date.now() > deadline) {
        throw new Error(`timed out waiting for state ${target}`);
      }
      await new Promise((resolve) => setTimeout(resolve, pollMs));
    }
  }
}
