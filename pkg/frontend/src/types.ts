export interface Frame {
  topic: string;
  payload: Record<string, unknown>;
}

export type OverrideKind = "stress" | "profile" | "pause" | "resume";

export interface OverrideCommand {
  kind: OverrideKind;
  value: number | string | null;
}

export type ConnectionStatus = "connecting" | "connected" | "reconnecting" | "closed";

export const TOPICS = {
  eda: "teaching/sensors/eda",
  hr: "teaching/sensors/hr",
  au: "teaching/sensors/au",
  vehicle: "teaching/vehicle/state",
  stress: "teaching/lm/stress",
  action: "teaching/lm/action",
  truth: "teaching/driver/truth",
  override: "teaching/ui/override",
} as const;

/** Minimal WebSocket surface so tests can inject a fake. */
export interface WsLike {
  onopen: (() => void) | null;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  send(data: string): void;
  close(): void;
}

export type WsFactory = (url: string) => WsLike;
