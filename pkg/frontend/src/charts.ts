import type { SeriesBuffer } from "./ringbuffer.js";

export interface ChartStyle {
  color: string;
  min?: number;
  max?: number;
  label: string;
  unit?: string;
}

/** Plain-canvas polyline chart over a series buffer's time window. */
export function drawSeries(
  canvas: HTMLCanvasElement,
  series: SeriesBuffer,
  style: ChartStyle,
  extra?: { series: SeriesBuffer; color: string },
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, width, height);
  const latest = series.latest() ?? extra?.series.latest();
  ctx.fillStyle = "#8fa3b8";
  ctx.font = "12px system-ui, sans-serif";
  if (!latest) {
    ctx.fillText(`${style.label}: waiting for data`, 8, 16);
    return;
  }
  const t1 = latest.t;
  const t0 = t1 - series.windowS;
  let lo = style.min ?? Infinity;
  let hi = style.max ?? -Infinity;
  const autoscale = style.min === undefined || style.max === undefined;
  if (autoscale) {
    for (const buf of extra ? [series, extra.series] : [series]) {
      for (const v of buf.values()) {
        lo = Math.min(lo, v);
        hi = Math.max(hi, v);
      }
    }
    if (!Number.isFinite(lo)) {
      lo = 0;
      hi = 1;
    }
    if (hi - lo < 1e-9) {
      hi = lo + 1;
    }
    const pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  const x = (t: number) => ((t - t0) / (t1 - t0 || 1)) * (width - 4) + 2;
  const y = (v: number) => height - 14 - ((v - lo) / (hi - lo)) * (height - 22);

  const trace = (buf: SeriesBuffer, color: string) => {
    const ts = buf.times();
    const vs = buf.values();
    if (ts.length === 0) {
      return;
    }
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(x(ts[0]), y(vs[0]));
    for (let i = 1; i < ts.length; i += 1) {
      ctx.lineTo(x(ts[i]), y(vs[i]));
    }
    ctx.stroke();
  };
  if (extra) {
    trace(extra.series, extra.color);
  }
  trace(series, style.color);
  const value = latest.v;
  ctx.fillStyle = "#c8d6e5";
  ctx.fillText(
    `${style.label}: ${value.toFixed(3)}${style.unit ?? ""}`,
    8,
    14,
  );
}

/** Horizontal bar group (AU intensities, action probabilities). */
export function drawBars(
  canvas: HTMLCanvasElement,
  labels: readonly string[],
  values: readonly number[],
  maxValue: number,
  colors: readonly string[] | string,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, width, height);
  const rowH = height / Math.max(1, labels.length);
  ctx.font = "11px system-ui, sans-serif";
  labels.forEach((label, i) => {
    const v = values[i] ?? 0;
    const frac = Math.min(1, Math.max(0, v / maxValue));
    const color = typeof colors === "string" ? colors : colors[i % colors.length];
    ctx.fillStyle = "#22303e";
    ctx.fillRect(64, i * rowH + 3, width - 120, rowH - 6);
    ctx.fillStyle = color;
    ctx.fillRect(64, i * rowH + 3, (width - 120) * frac, rowH - 6);
    ctx.fillStyle = "#c8d6e5";
    ctx.fillText(label, 6, i * rowH + rowH / 2 + 4);
    ctx.fillText(v.toFixed(2), width - 50, i * rowH + rowH / 2 + 4);
  });
}
