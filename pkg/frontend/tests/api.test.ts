import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { markersFromAgreement } from "../src/timeline.js";
import { ViewerState } from "../src/viewer.js";
import type { AgreementRecord } from "../src/types.js";

interface Call {
  url: string;
  method: string;
  body: unknown;
}

function stubFetch(routes: Record<string, (call: Call) => unknown>) {
  const calls: Call[] = [];
  const impl = async (url: string, init?: RequestInit): Promise<Response> => {
    const call: Call = {
      url,
      method: init?.method ?? "GET",
      body: init?.body ? JSON.parse(init.body as string) : undefined,
    };
    calls.push(call);
    const key = `${call.method} ${url}`;
    const handler = routes[key];
    if (!handler) {
      return new Response(JSON.stringify({ detail: "not found" }), { status: 404 });
    }
    return new Response(JSON.stringify(handler(call)), { status: 200 });
  };
  return { impl, calls };
}

describe("ApiClient", () => {
  it("sends box prompts in wire order", async () => {
    const { impl, calls } = stubFetch({
      "PUT /api/sessions/s1/prompts/0": () => ({ revision: 2, state: "prompted" }),
    });
    const api = new ApiClient("/api", impl);
    const response = await api.putPrompts("s1", 0, [
      { xMin: 1, yMin: 2, xMax: 3, yMax: 4 },
    ]);
    expect(response.revision).toBe(2);
    expect(calls[0].body).toEqual({ boxes: [[1, 2, 3, 4]] });
  });

  it("raises ApiError with status and detail", async () => {
    const impl = async (): Promise<Response> =>
      new Response(JSON.stringify({ detail: "cannot propagate" }), { status: 409 });
    const api = new ApiClient("", impl);
    await expect(api.propagate("s1", "forward")).rejects.toThrowError(ApiError);
    await expect(api.propagate("s1", "forward")).rejects.toMatchObject({
      status: 409,
    });
  });

  it("polls until the target state", async () => {
    let polls = 0;
    const { impl } = stubFetch({
      "GET /sessions/s1": () => {
        polls += 1;
        return {
          id: "s1", video_id: "v", num_frames: 5, frame_size: [64, 64],
          revision: polls, state: polls >= 3 ? "propagated" : "propagating",
          prompts: {}, seed_frame: 0, mode: "forward", agreement: [], error: null,
        };
      },
    });
    const api = new ApiClient("", impl);
    const session = await api.waitForState("s1", "propagated", 5_000, 1);
    expect(session.state).toBe("propagated");
    expect(polls).toBe(3);
  });
});

describe("gated-frame workflow against a server fixture", () => {
  it("shows one marker and advances the revision on repredict", async () => {
    // Fixture: a propagated plus-mode session whose agreement has exactly
    // one gated frame; repredict bumps the revision.
    let revision = 7;
    const agreement: AgreementRecord[] = [
      { frame: 0, iou: 1.0, gated: false, action: "keep_forward" },
      { frame: 1, iou: 0.92, gated: false, action: "keep_forward" },
      { frame: 2, iou: 0.31, gated: true, action: "repredicted" },
      { frame: 3, iou: 0.88, gated: false, action: "keep_forward" },
      { frame: 4, iou: 0.97, gated: false, action: "keep_forward" },
    ];
    const { impl } = stubFetch({
      "GET /sessions/s1/agreement": () => ({ revision, records: agreement }),
      "POST /sessions/s1/repredict": () => {
        revision += 1;
        return { revision, state: "propagated", changed_frames: [2] };
      },
    });
    const api = new ApiClient("", impl);
    const viewer = new ViewerState(5);

    const got = await api.getAgreement("s1");
    viewer.applyAgreement(got.records, got.revision);
    const markers = viewer.timelineMarkers();
    expect(markers).toHaveLength(1);
    expect(markers[0].frame).toBe(2);
    expect(markersFromAgreement(got.records)).toEqual(markers);

    const before = viewer.revision;
    const response = await api.repredict(
      "s1", 2, [{ xMin: 5, yMin: 5, xMax: 30, yMax: 30 }], false,
    );
    expect(response.revision).toBe(before + 1);
    expect(viewer.observeRevision(response.revision)).toBe(true);
    expect(viewer.revision).toBe(before + 1);
  });
});
