/** Time-windowed series buffer: keeps the last `windowS` seconds, in order. */
export class SeriesBuffer {
  private ts: number[] = [];
  private vs: number[] = [];

  constructor(readonly windowS: number = 120) {}

  push(t: number, v: number): void {
    const n = this.ts.length;
    if (n > 0 && t < this.ts[n - 1]) {
      return; // bus order is monotone per stream; drop stragglers
    }
    this.ts.push(t);
    this.vs.push(v);
    const cutoff = t - this.windowS;
    let drop = 0;
    while (drop < this.ts.length && this.ts[drop] < cutoff) {
      drop += 1;
    }
    if (drop > 0) {
      this.ts.splice(0, drop);
      this.vs.splice(0, drop);
    }
  }

  get length(): number {
    return this.ts.length;
  }

  latest(): { t: number; v: number } | null {
    const n = this.ts.length;
    return n ? { t: this.ts[n - 1], v: this.vs[n - 1] } : null;
  }

  times(): readonly number[] {
    return this.ts;
  }

  values(): readonly number[] {
    return this.vs;
  }

  clear(): void {
    this.ts = [];
    this.vs = [];
  }
}
