import { describe, expect, it } from "vitest";

import { BridgeClient } from "../src/client.js";
import type { Frame, WsLike } from "../src/types.js";
import { TOPICS } from "../src/types.js";

class FakeWs implements WsLike {
  onopen: (() => void) | null = null;
  onmessage: ((event: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;
  sent: string[] = [];
  closed = false;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  // test controls
  open(): void {
    this.onopen?.();
  }

  receive(frame: unknown): void {
    this.onmessage?.({ data: JSON.stringify(frame) });
  }

  drop(): void {
    this.onclose?.();
  }
}

function harness() {
  const sockets: FakeWs[] = [];
  const scheduled: Array<{ fn: () => void; ms: number }> = [];
  const frames: Frame[] = [];
  const statuses: string[] = [];
  const notices: string[] = [];
  const acks: string[] = [];
  const client = new BridgeClient("ws://test/ws", {
    wsFactory: () => {
      const ws = new FakeWs();
      sockets.push(ws);
      return ws;
    },
    schedule: (fn, ms) => {
      scheduled.push({ fn, ms });
      return scheduled.length;
    },
    now: () => 1000,
    onFrame: (frame) => frames.push(frame),
    onStatus: (status) => statuses.push(status),
    onNotice: (message) => notices.push(message),
    onOverrideAck: (_cmd, nonce) => acks.push(nonce),
  });
  return { client, sockets, scheduled, frames, statuses, notices, acks };
}

describe("BridgeClient", () => {
  it("connects and reports status", () => {
    const h = harness();
    h.client.connect();
    expect(h.statuses).toEqual(["connecting"]);
    h.sockets[0].open();
    expect(h.client.status).toBe("connected");
  });

  it("reconnects with growing backoff and keeps buffers alive", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.sockets[0].drop();
    expect(h.client.status).toBe("reconnecting");
    expect(h.scheduled[0].ms).toBe(500);
    h.scheduled[0].fn(); // first retry fails immediately
    h.sockets[1].drop();
    expect(h.scheduled[1].ms).toBe(1000);
    h.scheduled[1].fn();
    h.sockets[2].open();
    expect(h.client.status).toBe("connected");
    // backoff resets after a successful open
    h.sockets[2].drop();
    expect(h.scheduled[2].ms).toBe(500);
  });

  it("delivers frames and flags unknown-topic handling to the caller", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.sockets[0].receive({ topic: TOPICS.stress, payload: { ts: 1, stress: 0.4 } });
    expect(h.frames).toHaveLength(1);
    expect(h.frames[0].payload.stress).toBe(0.4);
    h.sockets[0].receive("not an object");
    expect(h.frames).toHaveLength(1);
  });

  it("clamps stress override values into [0,1] before sending", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.client.sendOverride({ kind: "stress", value: 1.2 });
    const frame = JSON.parse(h.sockets[0].sent[0]);
    expect(frame.topic).toBe(TOPICS.override);
    expect(frame.payload.value).toBe(1.0);
    expect(frame.payload.kind).toBe("stress");
  });

  it("sends profile override schema", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.client.sendOverride({ kind: "profile", value: "conservative" });
    const frame = JSON.parse(h.sockets[0].sent[0]);
    expect(frame.payload).toMatchObject({ kind: "profile", value: "conservative" });
  });

  it("queues up to 10 overrides while disconnected, then drops with notice", () => {
    const h = harness();
    h.client.connect(); // never opens
    for (let i = 0; i < 12; i += 1) {
      h.client.sendOverride({ kind: "stress", value: i / 12 });
    }
    expect(h.notices.filter((n) => n.includes("dropped"))).toHaveLength(2);
    h.sockets[0].open();
    expect(h.sockets[0].sent).toHaveLength(10); // queue flushed on connect
  });

  it("matches override echoes by nonce exactly once", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    const nonce = h.client.sendOverride({ kind: "stress", value: 0.7 });
    expect(nonce).toBeTruthy();
    const sent = JSON.parse(h.sockets[0].sent[0]);
    expect(sent.payload.nonce).toBe(nonce);
    h.sockets[0].receive({ topic: TOPICS.override, payload: sent.payload });
    h.sockets[0].receive({ topic: TOPICS.override, payload: sent.payload });
    expect(h.acks).toEqual([nonce]); // second echo does not re-ack
  });

  it("surfaces bridge error frames as notices, not frames", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.sockets[0].receive({ error: "upstream publishing restricted" });
    expect(h.frames).toHaveLength(0);
    expect(h.notices.some((n) => n.includes("restricted"))).toBe(true);
  });

  it("close() stops reconnecting", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.client.close();
    expect(h.client.status).toBe("closed");
    const before = h.sockets.length;
    for (const job of h.scheduled) {
      job.fn();
    }
    expect(h.sockets.length).toBe(before);
  });
});
