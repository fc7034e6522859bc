import { SeriesBuffer } from "./ringbuffer.js";
import type { Frame, OverrideKind } from "./types.js";
import { TOPICS } from "./types.js";

export const AU_NAMES = ["AU01", "AU04", "AU07", "AU15", "AU23"] as const;
export const PROFILES = ["conservative", "normal", "aggressive"] as const;

function num(payload: Record<string, unknown>, key: string): number | null {
  const value = payload[key];
  return typeof value === "number" && Number.isFinite(value) ? value : null;
}

function str(payload: Record<string, unknown>, key: string): string | null {
  const value = payload[key];
  return typeof value === "string" ? value : null;
}

/** All dashboard state: ring buffers for plotted series plus latest values. */
export class UiState {
  stress = new SeriesBuffer(120);
  truth = new SeriesBuffer(120);
  eda = new SeriesBuffer(120);
  hr = new SeriesBuffer(120);
  speed = new SeriesBuffer(120);
  au: Record<string, number> = {};
  actionProbs: number[] | null = null;
  actionProfile: string | null = null;
  vehicleProfile: string | null = null;
  activeOverrides = new Map<OverrideKind, number | string>();
  paused = false;
  framesSeen = 0;

  /** Returns false for frames on topics the dashboard does not plot. */
  ingest(frame: Frame): boolean {
    const p = frame.payload;
    const ts = num(p, "ts");
    switch (frame.topic) {
      case TOPICS.stress: {
        const stress = num(p, "stress");
        if (ts !== null && stress !== null) this.stress.push(ts, stress);
        break;
      }
      case TOPICS.truth: {
        const s = num(p, "s");
        if (ts !== null && s !== null) this.truth.push(ts, s);
        break;
      }
      case TOPICS.eda: {
        const eda = num(p, "eda_uS");
        if (ts !== null && eda !== null) this.eda.push(ts, eda);
        break;
      }
      case TOPICS.hr: {
        const bpm = num(p, "bpm");
        if (ts !== null && bpm !== null) this.hr.push(ts, bpm);
        break;
      }
      case TOPICS.vehicle: {
        const v = num(p, "v");
        if (ts !== null && v !== null) this.speed.push(ts, v);
        const profile = str(p, "profile");
        if (profile !== null) this.vehicleProfile = profile;
        break;
      }
      case TOPICS.au: {
        const au = p.au;
        if (au && typeof au === "object") this.au = au as Record<string, number>;
        break;
      }
      case TOPICS.action: {
        if (Array.isArray(p.probs)) this.actionProbs = p.probs as number[];
        const profile = str(p, "profile");
        if (profile !== null) this.actionProfile = profile;
        break;
      }
      case TOPICS.override: {
        const kind = str(p, "kind") as OverrideKind | null;
        if (kind !== null) {
          this.applyOverride(kind, p.value as number | string | null | undefined);
        }
        break;
      }
      default:
        return false;
    }
    this.framesSeen += 1;
    return true;
  }

  private applyOverride(kind: OverrideKind, value: number | string | null | undefined): void {
    if (kind === "pause") {
      this.paused = true;
      return;
    }
    if (kind === "resume") {
      this.paused = false;
      return;
    }
    if (value === null || value === undefined) {
      this.activeOverrides.delete(kind);
    } else {
      this.activeOverrides.set(kind, value);
    }
  }
}
