/** Wire protocol shared with the frame service. */

export type Quat = [number, number, number, number]; // [w, x, y, z]
export type Vec3 = [number, number, number];

export type ZMode = "hold" | "resample";

export interface PoseRequest {
  type: "pose";
  q: Quat;
  t: Vec3;
  z: ZMode;
  seed?: number;
}

export interface FrameResponse {
  type: "frame";
  w: number;
  h: number;
  pix: string; // base64 row-major uint8 grayscale, length w*h
  gen_ms: number;
  z_id: number;
}

export interface ErrorResponse {
  type: "error";
  msg: string;
}

export type ServerMessage = FrameResponse | ErrorResponse;

export interface ServiceInfo {
  w: number;
  h: number;
  noise_dim: number;
  spec_hash: string;
}

export function encodePoseRequest(req: PoseRequest): string {
  return JSON.stringify(req);
}

export function parseServerMessage(data: string): ServerMessage {
  const msg = JSON.parse(data);
  if (msg && msg.type === "frame") {
    if (
      typeof msg.w !== "number" ||
      typeof msg.h !== "number" ||
      typeof msg.pix !== "string" ||
      typeof msg.z_id !== "number"
    ) {
      throw new Error("malformed frame message");
    }
    return msg as FrameResponse;
  }
  if (msg && msg.type === "error" && typeof msg.msg === "string") {
    return msg as ErrorResponse;
  }
  throw new Error("unknown server message");
}

/** Decode base64 into bytes; works in both browsers and node. */
export function decodePixels(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  // node fallback
  return new Uint8Array(Buffer.from(b64, "base64"));
}

export function encodePixels(bytes: Uint8Array): string {
  if (typeof btoa === "function") {
    let bin = "";
    for (let i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]);
    return btoa(bin);
  }
  return Buffer.from(bytes).toString("base64");
}
