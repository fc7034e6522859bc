/**
 * Render scheduler with a frame-rate cap and latency instrumentation.
 *
 * Frames arrive faster than they are painted (vehicle state at 20 Hz, render
 * capped at 10 Hz); each cycle paints once and records how long the oldest
 * unpainted frame waited. That arrival-to-commit latency is the B-criterion
 * number shown in the footer.
 */
export class RenderLoop {
  lastLatencyMs = 0;
  maxLatencyMs = 0;
  commits = 0;
  private oldestPending: number | null = null;
  private timer: unknown = null;
  private readonly schedule: (fn: () => void, ms: number) => unknown;
  private readonly cancel: (handle: unknown) => void;
  private readonly now: () => number;

  constructor(
    private readonly paint: () => void,
    readonly intervalMs: number = 100,
    opts: {
      schedule?: (fn: () => void, ms: number) => unknown;
      cancel?: (handle: unknown) => void;
      now?: () => number;
    } = {},
  ) {
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.cancel = opts.cancel ?? ((handle) => clearTimeout(handle as number));
    this.now = opts.now ?? (() => performance.now());
  }

  /** Note a frame arrival (timestamp from the client's clock). */
  frameArrived(arrivedAt: number): void {
    if (this.oldestPending === null) {
      this.oldestPending = arrivedAt;
    }
  }

  start(): void {
    if (this.timer !== null) {
      return;
    }
    const cycle = () => {
      this.timer = this.schedule(cycle, this.intervalMs);
      this.commit();
    };
    this.timer = this.schedule(cycle, this.intervalMs);
  }

  /** Paint now and record latency for the frames consumed by this commit. */
  commit(): void {
    const pending = this.oldestPending;
    this.oldestPending = null;
    this.paint();
    this.commits += 1;
    if (pending !== null) {
      this.lastLatencyMs = this.now() - pending;
      this.maxLatencyMs = Math.max(this.maxLatencyMs, this.lastLatencyMs);
    }
  }

  stop(): void {
    if (this.timer !== null) {
      this.cancel(this.timer);
      this.timer = null;
    }
  }
}
