/**
 * Live-service loop test. Run with:
 *   RUN_INTEGRATION=1 SERVICE_URL=ws://127.0.0.1:PORT/ws npx vitest run test/integration.test.ts
 * The acceptance suite drives this against a real trained service.
 */
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";
import { rotationDelta, translationDelta } from "../src/pose.js";
import { ProbeSession, type ViewerFrame, type WebSocketLike } from "../src/session.js";

const url = process.env.SERVICE_URL ?? "";
const enabled = process.env.RUN_INTEGRATION === "1" && url !== "";

function frameCollector(session: ProbeSession) {
  const frames: ViewerFrame[] = [];
  const waiters: Array<(f: ViewerFrame) => void> = [];
  session.onFrame = (f) => {
    frames.push(f);
    waiters.shift()?.(f);
  };
  const next = (timeoutMs = 5000): Promise<ViewerFrame> =>
    new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("frame timeout")), timeoutMs);
      waiters.push((f) => {
        clearTimeout(timer);
        resolve(f);
      });
    });
  return { frames, next };
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

describe.skipIf(!enabled)("live service loop", () => {
  const session = new ProbeSession({
    socketFactory: (u) => new WebSocket(u) as unknown as WebSocketLike,
  });
  const collector = frameCollector(session);

  beforeAll(async () => {
    await session.connect(url);
  });
  afterAll(() => session.close());

  it("nudge -> frame median round trip under 200 ms", async () => {
    for (let i = 0; i < 30; i++) {
      const p = collector.next();
      if (i % 2 === 0) session.nudge(translationDelta([0.5, 0, i % 4 === 0 ? 0.5 : -0.5]));
      else session.nudge(rotationDelta([0, 1, 0], 1));
      const frame = await p;
      expect(frame.pixels.length).toBe(frame.w * frame.h);
    }
    const median = session.medianRoundTripMs();
    expect(median).not.toBeNull();
    console.log(`INTEGRATION median_rtt_ms=${median!.toFixed(2)}`);
    expect(median!).toBeLessThan(200);
  });

  it("freeze holds the speckle pattern; unfreeze resamples", async () => {
    expect(session.toggleFreeze()).toBe(true);
    let p = collector.next();
    session.nudge({ dt: [0, 0, 0] }); // same pose, z held
    const a = await p;
    p = collector.next();
    session.nudge({ dt: [0, 0, 0] });
    const b = await p;
    expect(b.zId).toBe(a.zId); // hold: z unchanged
    expect(Buffer.from(b.pixels).equals(Buffer.from(a.pixels))).toBe(true);

    p = collector.next();
    expect(session.toggleFreeze()).toBe(false); // triggers resample
    const c = await p;
    expect(c.zId).toBeGreaterThan(a.zId);
    p = collector.next();
    session.resample();
    const d = await p;
    expect(d.zId).toBe(c.zId + 1);
    console.log(`INTEGRATION z_ids hold=${a.zId},${b.zId} resample=${c.zId},${d.zId}`);
  });

  it("rapid nudges coalesce into few requests, newest pose wins", async () => {
    const sent0 = session.counters.requestsSent;
    const nudges0 = session.counters.nudges;
    for (let i = 0; i < 50; i++) session.nudge(translationDelta([0.1, 0, 0]));
    // wait for the burst to settle: no pending request and a quiet wire
    let settled = 0;
    for (let i = 0; i < 100 && settled < 3; i++) {
      const before = session.counters.framesReceived;
      await sleep(50);
      settled = session.counters.framesReceived === before ? settled + 1 : 0;
    }
    const sent = session.counters.requestsSent - sent0;
    expect(session.counters.nudges - nudges0).toBe(50);
    expect(sent).toBeLessThan(10);
    console.log(`INTEGRATION coalescing nudges=50 requests=${sent}`);
  });
});
