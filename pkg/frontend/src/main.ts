import { ProbeSession } from "./session.js";
import { bindViewer, type ViewerElements } from "./viewer.js";

const DEFAULT_URL = `ws://${location.hostname || "127.0.0.1"}:8080/ws`;

async function start(): Promise<void> {
  const els: ViewerElements = {
    canvas: document.getElementById("frame") as HTMLCanvasElement,
    status: document.getElementById("status") as HTMLElement,
    freezeButton: document.getElementById("freeze") as HTMLButtonElement,
    resampleButton: document.getElementById("resample") as HTMLButtonElement,
    stepSlider: document.getElementById("step-mm") as HTMLInputElement,
    angleSlider: document.getElementById("step-deg") as HTMLInputElement,
    gtCanvas: (document.getElementById("gt") as HTMLCanvasElement) ?? undefined,
  };
  const params = new URLSearchParams(location.search);
  const url = params.get("ws") ?? DEFAULT_URL;
  const httpBase = url.replace(/^ws/, "http").replace(/\/ws$/, "");

  const session = new ProbeSession();
  els.status.textContent = `connecting to ${url}…`;
  try {
    await session.connect(url);
  } catch {
    els.status.textContent = `connection to ${url} failed — is the service running?`;
    return;
  }
  els.status.textContent = "connected — WASD/QE translate, arrows rotate, F freezes";
  bindViewer(session, els, httpBase);
  session.resample(); // fetch the first frame
}

void start();
