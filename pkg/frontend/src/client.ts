import type {
  ConnectionStatus,
  Frame,
  OverrideCommand,
  WsFactory,
  WsLike,
} from "./types.js";
import { TOPICS } from "./types.js";

const BACKOFF_MS = [500, 1000, 2000, 4000, 8000];
const OFFLINE_QUEUE_LIMIT = 10;

export interface BridgeClientOptions {
  wsFactory?: WsFactory;
  schedule?: (fn: () => void, ms: number) => unknown;
  now?: () => number;
  onFrame?: (frame: Frame, arrivedAt: number) => void;
  onStatus?: (status: ConnectionStatus) => void;
  onOverrideAck?: (cmd: OverrideCommand, nonce: string) => void;
  onNotice?: (message: string) => void;
}

/**
 * Bridge session: auto-reconnect with backoff, a bounded offline queue for
 * override commands, and nonce matching so every override is confirmed by
 * its own echo from the bus (exactly once).
 */
export class BridgeClient {
  status: ConnectionStatus = "closed";
  private ws: WsLike | null = null;
  private backoffIndex = 0;
  private queue: string[] = [];
  private pendingNonces = new Map<string, OverrideCommand>();
  private nonceCounter = 0;
  private closedByUser = false;
  private readonly wsFactory: WsFactory;
  private readonly schedule: (fn: () => void, ms: number) => unknown;
  private readonly now: () => number;

  constructor(readonly url: string, private readonly opts: BridgeClientOptions = {}) {
    this.wsFactory =
      opts.wsFactory ?? ((u) => new WebSocket(u) as unknown as WsLike);
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.now = opts.now ?? (() => performance.now());
  }

  connect(): void {
    this.closedByUser = false;
    this.setStatus(this.status === "closed" ? "connecting" : "reconnecting");
    const ws = this.wsFactory(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffIndex = 0;
      this.setStatus("connected");
      for (const text of this.queue.splice(0)) {
        ws.send(text);
      }
    };
    ws.onmessage = (event) => this.handleMessage(event.data);
    ws.onerror = () => {
      /* close always follows */
    };
    ws.onclose = () => {
      this.ws = null;
      if (this.closedByUser) {
        this.setStatus("closed");
        return;
      }
      this.setStatus("reconnecting");
      const delay = BACKOFF_MS[Math.min(this.backoffIndex, BACKOFF_MS.length - 1)];
      this.backoffIndex += 1;
      this.schedule(() => {
        if (!this.closedByUser) {
          this.connect();
        }
      }, delay);
    };
  }

  close(): void {
    this.closedByUser = true;
    this.ws?.close();
    this.ws = null;
    this.setStatus("closed");
  }

  get connected(): boolean {
    return this.status === "connected";
  }

  /** Clamp, stamp, queue-or-send an override; resolves via the bus echo. */
  sendOverride(cmd: OverrideCommand): string | null {
    let value = cmd.value;
    if (cmd.kind === "stress" && typeof value === "number") {
      value = Math.min(1, Math.max(0, value));
    }
    const nonce = `n${(this.nonceCounter += 1)}`;
    const frame = {
      topic: TOPICS.override,
      payload: { ts: this.now() / 1000, kind: cmd.kind, value, nonce },
    };
    const text = JSON.stringify(frame);
    this.pendingNonces.set(nonce, { kind: cmd.kind, value });
    if (this.connected && this.ws) {
      this.ws.send(text);
      return nonce;
    }
    if (this.queue.length >= OFFLINE_QUEUE_LIMIT) {
      this.pendingNonces.delete(nonce);
      this.opts.onNotice?.(`override dropped: ${this.queue.length} already queued offline`);
      return null;
    }
    this.queue.push(text);
    this.opts.onNotice?.(`offline: override queued (${this.queue.length})`);
    return nonce;
  }

  private handleMessage(data: string): void {
    const arrivedAt = this.now();
    let frame: Frame;
    try {
      frame = JSON.parse(data) as Frame;
    } catch {
      console.warn("bridge sent unparseable frame", data.slice(0, 120));
      return;
    }
    if (typeof frame !== "object" || frame === null) {
      return;
    }
    if ("error" in frame) {
      this.opts.onNotice?.(`bridge error: ${(frame as { error?: string }).error}`);
      return;
    }
    if (frame.topic === TOPICS.override) {
      const nonce = (frame.payload as { nonce?: string }).nonce;
      if (nonce && this.pendingNonces.has(nonce)) {
        const cmd = this.pendingNonces.get(nonce)!;
        this.pendingNonces.delete(nonce);
        this.opts.onOverrideAck?.(cmd, nonce);
      }
    }
    this.opts.onFrame?.(frame, arrivedAt);
  }

  private setStatus(status: ConnectionStatus): void {
    if (status !== this.status) {
      this.status = status;
      this.opts.onStatus?.(status);
    }
  }
}
