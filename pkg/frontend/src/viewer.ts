/** Canvas painting and input bindings for the probe viewer. */

import { rotationDelta, translationDelta, type PoseDelta } from "./pose.js";
import type { ProbeSession, ViewerFrame } from "./session.js";

/** Paint a grayscale frame onto a canvas, resizing it if dims changed. */
export function paintFrame(canvas: HTMLCanvasElement, frame: ViewerFrame): void {
  if (canvas.width !== frame.w || canvas.height !== frame.h) {
    canvas.width = frame.w;
    canvas.height = frame.h;
  }
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const img = ctx.createImageData(frame.w, frame.h);
  const rgba = img.data;
  for (let i = 0; i < frame.pixels.length; i++) {
    const v = frame.pixels[i];
    const o = i * 4;
    rgba[o] = v;
    rgba[o + 1] = v;
    rgba[o + 2] = v;
    rgba[o + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
}

export interface StepSizes {
  translateMm: number;
  rotateDeg: number;
}

/**
 * Keyboard map: WASD moves in the lateral/axial plane, Q/E moves in
 * elevation; arrow keys rotate about the in-plane axes.
 */
export function deltaForKey(key: string, steps: StepSizes): PoseDelta | null {
  const d = steps.translateMm;
  const r = steps.rotateDeg;
  switch (key) {
    case "w": case "W": return translationDelta([0, -d, 0]);
    case "s": case "S": return translationDelta([0, d, 0]);
    case "a": case "A": return translationDelta([-d, 0, 0]);
    case "d": case "D": return translationDelta([d, 0, 0]);
    case "q": case "Q": return translationDelta([0, 0, -d]);
    case "e": case "E": return translationDelta([0, 0, d]);
    case "ArrowUp": return rotationDelta([1, 0, 0], r);
    case "ArrowDown": return rotationDelta([1, 0, 0], -r);
    case "ArrowLeft": return rotationDelta([0, 1, 0], r);
    case "ArrowRight": return rotationDelta([0, 1, 0], -r);
    default: return null;
  }
}

export interface ViewerElements {
  canvas: HTMLCanvasElement;
  status: HTMLElement;
  freezeButton: HTMLButtonElement;
  resampleButton: HTMLButtonElement;
  stepSlider: HTMLInputElement;
  angleSlider: HTMLInputElement;
  gtCanvas?: HTMLCanvasElement;
}

export function bindViewer(
  session: ProbeSession,
  els: ViewerElements,
  httpBase?: string
): void {
  const steps: StepSizes = {
    translateMm: Number(els.stepSlider.value) || 1,
    rotateDeg: Number(els.angleSlider.value) || 1,
  };
  els.stepSlider.addEventListener("input", () => {
    steps.translateMm = Number(els.stepSlider.value);
  });
  els.angleSlider.addEventListener("input", () => {
    steps.rotateDeg = Number(els.angleSlider.value);
  });

  session.onFrame = (frame) => {
    paintFrame(els.canvas, frame);
    const med = session.medianRoundTripMs();
    els.status.textContent =
      `z_id ${frame.zId} · gen ${frame.genMs.toFixed(1)} ms · ` +
      `rtt ${frame.roundTripMs.toFixed(1)} ms` +
      (med !== null ? ` (median ${med.toFixed(1)} ms)` : "");
    if (els.gtCanvas && httpBase) void paintGroundTruth(session, els.gtCanvas, httpBase);
  };
  session.onError = (msg) => {
    els.status.textContent = `error: ${msg}`;
  };

  window.addEventListener("keydown", (ev) => {
    if (ev.key === "f" || ev.key === "F") {
      els.freezeButton.textContent = session.toggleFreeze() ? "unfreeze" : "freeze";
      return;
    }
    const delta = deltaForKey(ev.key, steps);
    if (delta) {
      ev.preventDefault();
      session.nudge(delta);
    }
  });

  els.freezeButton.addEventListener("click", () => {
    els.freezeButton.textContent = session.toggleFreeze() ? "unfreeze" : "freeze";
  });
  els.resampleButton.addEventListener("click", () => session.resample());
}

/** Optional side panel: speckle-free render of the same pose. */
async function paintGroundTruth(
  session: ProbeSession,
  canvas: HTMLCanvasElement,
  httpBase: string
): Promise<void> {
  const { q, t } = session.pose;
  const pose = [...q, ...t].join(",");
  try {
    const res = await fetch(`${httpBase}/render_gt?pose=${encodeURIComponent(pose)}`);
    if (!res.ok) return;
    const body = (await res.json()) as { w: number; h: number; pix: string };
    const bin = atob(body.pix);
    const pixels = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) pixels[i] = bin.charCodeAt(i);
    paintFrame(canvas, {
      w: body.w,
      h: body.h,
      pixels,
      genMs: 0,
      zId: 0,
      roundTripMs: 0,
    });
  } catch {
    // panel is optional; ignore transport errors
  }
}
