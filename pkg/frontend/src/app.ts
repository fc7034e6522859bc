import { BridgeClient } from "./client.js";
import { drawBars, drawSeries } from "./charts.js";
import { RenderLoop } from "./renderloop.js";
import { AU_NAMES, PROFILES, UiState } from "./state.js";
import type { OverrideKind } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const state = new UiState();
const params = new URLSearchParams(location.search);
const wsUrl = params.get("bridge") ?? `ws://${location.host}/ws`;

const statusEl = el<HTMLSpanElement>("status");
const noticeEl = el<HTMLSpanElement>("notice");
const latencyEl = el<HTMLSpanElement>("latency");
const profileEl = el<HTMLSpanElement>("profile");
const actionEl = el<HTMLSpanElement>("action");
const overridesEl = el<HTMLSpanElement>("overrides");
const stressSlider = el<HTMLInputElement>("stress-slider");
const stressValue = el<HTMLSpanElement>("stress-value");

function paint(): void {
  drawSeries(el("chart-stress"), state.stress,
    { color: "#ff9f43", min: 0, max: 1, label: "stress estimate" },
    { series: state.truth, color: "#3d5a73" });
  drawSeries(el("chart-eda"), state.eda, { color: "#48dbfb", label: "EDA", unit: " µS" });
  drawSeries(el("chart-hr"), state.hr,
    { color: "#ff6b81", min: 40, max: 140, label: "heart rate", unit: " bpm" });
  drawSeries(el("chart-speed"), state.speed,
    { color: "#1dd1a1", min: 0, max: 32, label: "speed", unit: " m/s" });
  drawBars(el("chart-au"), AU_NAMES, AU_NAMES.map((name) => state.au[name] ?? 0),
    5, "#feca57");
  drawBars(el("chart-probs"), PROFILES,
    PROFILES.map((_, i) => state.actionProbs?.[i] ?? 0), 1,
    ["#1dd1a1", "#48dbfb", "#ff6b81"]);
  profileEl.textContent = state.vehicleProfile ?? "–";
  actionEl.textContent = state.actionProfile ?? "–";
  const parts: string[] = [];
  for (const [kind, value] of state.activeOverrides) {
    parts.push(`${kind}=${value}`);
  }
  if (state.paused) {
    parts.push("paused");
  }
  overridesEl.textContent = parts.length ? parts.join("  ") : "none";
  overridesEl.className = parts.length ? "active" : "";
  latencyEl.textContent =
    `${loop.lastLatencyMs.toFixed(0)} ms (max ${loop.maxLatencyMs.toFixed(0)})`;
}

const loop = new RenderLoop(paint, 100);

const client = new BridgeClient(wsUrl, {
  onFrame: (frame, arrivedAt) => {
    if (!state.ingest(frame)) {
      console.debug("ignored frame topic", frame.topic);
      return;
    }
    loop.frameArrived(arrivedAt);
  },
  onStatus: (status) => {
    statusEl.textContent = status;
    statusEl.className = `status-${status}`;
  },
  onNotice: (message) => {
    noticeEl.textContent = message;
    setTimeout(() => {
      if (noticeEl.textContent === message) {
        noticeEl.textContent = "";
      }
    }, 4000);
  },
  onOverrideAck: (cmd) => {
    noticeEl.textContent = `override ${cmd.kind} confirmed`;
  },
});

function sendOverride(kind: OverrideKind, value: number | string | null): void {
  client.sendOverride({ kind, value });
}

stressSlider.addEventListener("input", () => {
  stressValue.textContent = Number(stressSlider.value).toFixed(2);
});
el<HTMLButtonElement>("btn-stress").addEventListener("click", () => {
  sendOverride("stress", Number(stressSlider.value));
});
el<HTMLButtonElement>("btn-stress-clear").addEventListener("click", () => {
  sendOverride("stress", null);
});
for (const profile of PROFILES) {
  el<HTMLButtonElement>(`btn-${profile}`).addEventListener("click", () => {
    sendOverride("profile", profile);
  });
}
el<HTMLButtonElement>("btn-profile-clear").addEventListener("click", () => {
  sendOverride("profile", null);
});
el<HTMLButtonElement>("btn-pause").addEventListener("click", () => {
  sendOverride("pause", null);
});
el<HTMLButtonElement>("btn-resume").addEventListener("click", () => {
  sendOverride("resume", null);
});

client.connect();
loop.start();
