import { describe, expect, it } from "vitest";
import { encodePixels } from "../src/protocol.js";
import { translationDelta } from "../src/pose.js";
import { ProbeSession, type WebSocketLike } from "../src/session.js";

/** In-memory socket the test drives by hand. */
class MockSocket implements WebSocketLike {
  sent: string[] = [];
  closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: ((err?: unknown) => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.closed = true;
    this.onclose?.();
  }
  /** Deliver a frame for the given z_id. */
  reply(zId: number, w = 2, h = 2): void {
    const pix = encodePixels(new Uint8Array(w * h).fill(zId & 0xff));
    this.onmessage?.({
      data: JSON.stringify({ type: "frame", w, h, pix, gen_ms: 1.0, z_id: zId }),
    });
  }
  replyError(msg: string): void {
    this.onmessage?.({ data: JSON.stringify({ type: "error", msg }) });
  }
}

const stubFetch = (() =>
  Promise.resolve({
    ok: true,
    json: () => Promise.resolve({ w: 2, h: 2, noise_dim: 4, spec_hash: "x" }),
  })) as unknown as typeof fetch;

async function makeSession(): Promise<{ session: ProbeSession; sock: MockSocket }> {
  const sock = new MockSocket();
  const session = new ProbeSession({
    socketFactory: () => {
      queueMicrotask(() => sock.onopen?.());
      return sock;
    },
    fetchFn: stubFetch,
    now: () => Date.now(),
  });
  await session.connect("ws://test/ws");
  return { session, sock };
}

describe("request coalescing", () => {
  it("keeps at most one request in flight", async () => {
    const { session, sock } = await makeSession();
    for (let i = 0; i < 10; i++) session.nudge(translationDelta([1, 0, 0]));
    expect(sock.sent.length).toBe(1); // first went out, rest coalesced
    sock.reply(0);
    expect(sock.sent.length).toBe(2); // flush sends exactly one follow-up
    sock.reply(0);
    expect(sock.sent.length).toBe(2); // nothing pending
  });

  it("50 rapid nudges produce far fewer requests, newest pose wins", async () => {
    const { session, sock } = await makeSession();
    for (let i = 0; i < 50; i++) session.nudge(translationDelta([1, 0, 0]));
    sock.reply(0);
    expect(session.counters.nudges).toBe(50);
    expect(session.counters.requestsSent).toBeLessThan(10);
    const last = JSON.parse(sock.sent[sock.sent.length - 1]);
    expect(last.t).toEqual([50, 0, 0]); // the coalesced request carries the final pose
  });

  it("interleaved reply/nudge cycles request one frame per settled pose", async () => {
    const { session, sock } = await makeSession();
    session.nudge(translationDelta([0, 1, 0]));
    sock.reply(0);
    session.nudge(translationDelta([0, 1, 0]));
    sock.reply(0);
    expect(sock.sent.length).toBe(2);
    expect(session.counters.framesReceived).toBe(2);
  });
});

describe("freeze semantics", () => {
  it("frozen nudges request z=hold; unfreezing resamples", async () => {
    const { session, sock } = await makeSession();
    expect(session.toggleFreeze()).toBe(true);
    session.nudge(translationDelta([1, 0, 0]));
    expect(JSON.parse(sock.sent[0]).z).toBe("hold");
    sock.reply(3);
    expect(session.toggleFreeze()).toBe(false);
    expect(JSON.parse(sock.sent[sock.sent.length - 1]).z).toBe("resample");
  });

  it("unfrozen nudges resample live speckle", async () => {
    const { session, sock } = await makeSession();
    session.nudge(translationDelta([1, 0, 0]));
    expect(JSON.parse(sock.sent[0]).z).toBe("resample");
  });
});

describe("frame delivery", () => {
  it("passes dims, z_id and round trip to the frame callback", async () => {
    const { session, sock } = await makeSession();
    const seen: number[] = [];
    session.onFrame = (f) => {
      seen.push(f.zId);
      expect(f.pixels.length).toBe(f.w * f.h);
      expect(f.roundTripMs).toBeGreaterThanOrEqual(0);
    };
    session.nudge(translationDelta([1, 0, 0]));
    sock.reply(1);
    session.resample();
    sock.reply(2);
    expect(seen).toEqual([1, 2]);
    expect(session.medianRoundTripMs()).not.toBeNull();
  });

  it("drops unsolicited duplicate frames instead of repainting", async () => {
    const { session, sock } = await makeSession();
    let painted = 0;
    session.onFrame = () => painted++;
    session.nudge(translationDelta([1, 0, 0]));
    sock.reply(1);
    sock.reply(1); // duplicate with nothing in flight
    expect(painted).toBe(1);
    expect(session.counters.framesDropped).toBe(1);
  });

  it("survives server errors and keeps serving queued poses", async () => {
    const { session, sock } = await makeSession();
    const errors: string[] = [];
    session.onError = (m) => errors.push(m);
    session.nudge(translationDelta([1, 0, 0]));
    session.nudge(translationDelta([1, 0, 0])); // queued
    sock.replyError("bad pose");
    expect(errors).toEqual(["bad pose"]);
    expect(sock.sent.length).toBe(2); // queued pose still sent after the error
    sock.reply(0);
    expect(session.counters.framesReceived).toBe(1);
  });
});
