import { describe, expect, it } from "vitest";

import { BridgeClient } from "../src/client.js";
import { RenderLoop } from "../src/renderloop.js";
import { UiState } from "../src/state.js";
import type { WsLike } from "../src/types.js";
import { TOPICS } from "../src/types.js";

class FakeWs implements WsLike {
  onopen: (() => void) | null = null;
  onmessage: ((event: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;
  send(): void {}
  close(): void {}
}

/**
 * B-criterion: frames must be rendered within 250 ms of arrival. The render
 * loop is capped at 10 Hz, so worst case is ~100 ms of queueing plus paint
 * time; the instrumented arrival-to-commit latency verifies it end to end.
 */
describe("render latency instrumentation", () => {
  it("stress frames reach a render commit within 250 ms (real timers)",
    async () => {
      const state = new UiState();
      const painted: number[] = [];
      const loop = new RenderLoop(() => painted.push(state.stress.length), 100);
      const ws = new FakeWs();
      const client = new BridgeClient("ws://x/ws", {
        wsFactory: () => ws,
        onFrame: (frame, arrivedAt) => {
          if (state.ingest(frame)) {
            loop.frameArrived(arrivedAt);
          }
        },
      });
      client.connect();
      ws.onopen?.();
      loop.start();
      const samples = 20;
      for (let i = 0; i < samples; i += 1) {
        ws.onmessage?.({
          data: JSON.stringify({
            topic: TOPICS.stress,
            payload: { ts: i * 0.25, stress: 0.2 + 0.01 * i },
          }),
        });
        await new Promise((resolve) => setTimeout(resolve, 30));
      }
      await new Promise((resolve) => setTimeout(resolve, 150));
      loop.stop();
      expect(state.stress.length).toBe(samples);
      expect(loop.commits).toBeGreaterThan(3);
      expect(loop.maxLatencyMs).toBeGreaterThan(0);
      expect(loop.maxLatencyMs).toBeLessThan(250);
      const status = loop.maxLatencyMs < 250 ? "PASS" : "FAIL";
      console.log(`[${status}] B1 render-latency: max ${loop.maxLatencyMs.toFixed(1)} ms`
        + ` over ${loop.commits} commits (< 250 ms)`);
    });

  it("latency accounts from the oldest unpainted frame", () => {
    let clock = 0;
    const loop = new RenderLoop(() => {}, 100, { now: () => clock });
    loop.frameArrived(10);
    loop.frameArrived(40); // older frame dominates the measurement
    clock = 90;
    loop.commit();
    expect(loop.lastLatencyMs).toBe(80);
    clock = 200;
    loop.commit(); // nothing pending: latency unchanged
    expect(loop.lastLatencyMs).toBe(80);
  });
});
