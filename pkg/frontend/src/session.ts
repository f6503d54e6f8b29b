/**
 * Probe session: owns the websocket, the current pose, and the freeze state.
 *
 * Request discipline: at most one pose request is in flight at any time.
 * Rapid nudges coalesce — only the newest pose is sent once the in-flight
 * response lands (newest-wins). Responses that no longer match the most
 * recently sent request id are dropped, so a stale frame can never overwrite
 * a newer one.
 */

import {
  encodePoseRequest,
  parseServerMessage,
  decodePixels,
  type FrameResponse,
  type ServiceInfo,
  type ZMode,
} from "./protocol.js";
import { applyDelta, IDENTITY_POSE, type Pose, type PoseDelta } from "./pose.js";

export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: ((err?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => WebSocketLike;

export interface ViewerFrame {
  w: number;
  h: number;
  pixels: Uint8Array;
  genMs: number;
  zId: number;
  roundTripMs: number;
}

export interface SessionCounters {
  nudges: number;
  requestsSent: number;
  framesReceived: number;
  framesDropped: number;
  errors: number;
}

export interface SessionOptions {
  socketFactory?: SocketFactory;
  fetchFn?: typeof fetch;
  /** monotonic clock, injectable for tests */
  now?: () => number;
}

export class ProbeSession {
  pose: Pose = { q: [...IDENTITY_POSE.q], t: [...IDENTITY_POSE.t] } as Pose;
  frozen = false;
  info: ServiceInfo | null = null;

  readonly counters: SessionCounters = {
    nudges: 0,
    requestsSent: 0,
    framesReceived: 0,
    framesDropped: 0,
    errors: 0,
  };

  onFrame: ((frame: ViewerFrame) => void) | null = null;
  onError: ((msg: string) => void) | null = null;

  private ws: WebSocketLike | null = null;
  private open = false;
  private inFlight = false;
  private dirty = false;
  private pendingZ: ZMode | null = null;
  private requestId = 0;
  private expectedId = -1;
  private sentAt = 0;
  private rtts: number[] = [];

  private readonly makeSocket: SocketFactory;
  private readonly fetchFn: typeof fetch | null;
  private readonly now: () => number;

  constructor(opts: SessionOptions = {}) {
    this.makeSocket =
      opts.socketFactory ?? ((url) => new WebSocket(url) as unknown as WebSocketLike);
    this.fetchFn = opts.fetchFn ?? (typeof fetch === "function" ? fetch : null);
    this.now = opts.now ?? (() => performance.now());
  }

  /** Connect to ws://host:port/ws, fetching /info from the http origin first. */
  async connect(wsUrl: string): Promise<void> {
    const httpBase = wsUrl.replace(/^ws/, "http").replace(/\/ws$/, "");
    if (this.fetchFn) {
      try {
        const res = await this.fetchFn(`${httpBase}/info`);
        if (res.ok) this.info = (await res.json()) as ServiceInfo;
      } catch {
        // info is advisory; the first frame carries dims anyway
      }
    }
    await new Promise<void>((resolve, reject) => {
      const ws = this.makeSocket(wsUrl);
      this.ws = ws;
      ws.onopen = () => {
        this.open = true;
        resolve();
      };
      ws.onerror = (err) => {
        if (!this.open) reject(err instanceof Error ? err : new Error("connect failed"));
      };
      ws.onclose = () => {
        this.open = false;
        this.inFlight = false;
      };
      ws.onmessage = (ev) => this.handleMessage(String(ev.data));
    });
  }

  close(): void {
    this.ws?.close();
    this.ws = null;
    this.open = false;
  }

  /** Apply a pose nudge and schedule a frame request (coalesced). */
  nudge(delta: PoseDelta): void {
    this.pose = applyDelta(this.pose, delta);
    this.counters.nudges++;
    this.requestFrame();
  }

  /**
   * Frozen: every request holds the current speckle pattern (z unchanged).
   * Unfreezing immediately resamples so live speckle resumes.
   */
  toggleFreeze(): boolean {
    this.frozen = !this.frozen;
    if (!this.frozen) this.requestFrame("resample");
    return this.frozen;
  }

  /** Explicitly draw a new speckle pattern at the current pose. */
  resample(): void {
    this.requestFrame("resample");
  }

  medianRoundTripMs(): number | null {
    if (this.rtts.length === 0) return null;
    const sorted = [...this.rtts].sort((a, b) => a - b);
    const mid = sorted.length >> 1;
    return sorted.length % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2;
  }

  private requestFrame(z?: ZMode): void {
    const zMode: ZMode = z ?? (this.frozen ? "hold" : "resample");
    if (!this.open || !this.ws) return;
    if (this.inFlight) {
      // newest-wins: remember that a fresher pose exists; resample sticks
      this.dirty = true;
      if (zMode === "resample" && z) this.pendingZ = "resample";
      return;
    }
    this.sendNow(zMode);
  }

  private sendNow(zMode: ZMode): void {
    if (!this.ws) return;
    this.requestId++;
    this.expectedId = this.requestId;
    this.inFlight = true;
    this.dirty = false;
    this.sentAt = this.now();
    this.counters.requestsSent++;
    this.ws.send(
      encodePoseRequest({
        type: "pose",
        q: [...this.pose.q] as typeof this.pose.q,
        t: [...this.pose.t] as typeof this.pose.t,
        z: zMode,
      })
    );
  }

  private handleMessage(data: string): void {
    let msg;
    try {
      msg = parseServerMessage(data);
    } catch {
      this.counters.errors++;
      return;
    }
    if (msg.type === "error") {
      this.counters.errors++;
      this.inFlight = false;
      this.onError?.(msg.msg);
      this.flushPending();
      return;
    }
    if (!this.inFlight) {
      // unsolicited or duplicate frame: nothing awaited it, drop
      this.counters.framesDropped++;
      return;
    }
    const rtt = this.now() - this.sentAt;
    const matchesLatest = this.requestId === this.expectedId;
    this.inFlight = false;
    if (!matchesLatest) {
      // superseded request: drop, never paint over a newer frame
      this.counters.framesDropped++;
      this.flushPending();
      return;
    }
    this.counters.framesReceived++;
    this.rtts.push(rtt);
    if (this.rtts.length > 200) this.rtts.shift();
    this.deliver(msg, rtt);
    this.flushPending();
  }

  private flushPending(): void {
    if (this.dirty && this.open) {
      const z = this.pendingZ ?? (this.frozen ? "hold" : "resample");
      this.pendingZ = null;
      this.sendNow(z);
    }
  }

  private deliver(msg: FrameResponse, roundTripMs: number): void {
    const pixels = decodePixels(msg.pix);
    if (pixels.length !== msg.w * msg.h) {
      this.counters.errors++;
      return;
    }
    this.onFrame?.({
      w: msg.w,
      h: msg.h,
      pixels,
      genMs: msg.gen_ms,
      zId: msg.z_id,
      roundTripMs,
    });
  }
}
