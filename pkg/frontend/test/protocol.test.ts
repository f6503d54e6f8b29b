import { describe, expect, it } from "vitest";
import {
  decodePixels,
  encodePixels,
  encodePoseRequest,
  parseServerMessage,
  type PoseRequest,
} from "../src/protocol.js";

describe("wire protocol", () => {
  it("pose request serializes with exact field names", () => {
    const req: PoseRequest = {
      type: "pose",
      q: [1, 0, 0, 0],
      t: [0, 0, 10],
      z: "hold",
    };
    const parsed = JSON.parse(encodePoseRequest(req));
    expect(parsed).toEqual({ type: "pose", q: [1, 0, 0, 0], t: [0, 0, 10], z: "hold" });
  });

  it("seed is included only when set", () => {
    const withSeed = JSON.parse(
      encodePoseRequest({ type: "pose", q: [1, 0, 0, 0], t: [0, 0, 0], z: "resample", seed: 7 })
    );
    expect(withSeed.seed).toBe(7);
    const without = JSON.parse(
      encodePoseRequest({ type: "pose", q: [1, 0, 0, 0], t: [0, 0, 0], z: "resample" })
    );
    expect("seed" in without).toBe(false);
  });

  it("parses frame and error messages, rejects junk", () => {
    const frame = parseServerMessage(
      JSON.stringify({ type: "frame", w: 2, h: 1, pix: "AAE=", gen_ms: 3.5, z_id: 4 })
    );
    expect(frame.type).toBe("frame");
    const err = parseServerMessage(JSON.stringify({ type: "error", msg: "bad pose" }));
    expect(err.type).toBe("error");
    expect(() => parseServerMessage("{}")).toThrow();
    expect(() => parseServerMessage(JSON.stringify({ type: "frame", w: 2 }))).toThrow();
  });

  it("base64 pixel round trip is lossless", () => {
    const bytes = new Uint8Array(256).map((_, i) => i);
    const decoded = decodePixels(encodePixels(bytes));
    expect(decoded).toEqual(bytes);
  });
});
