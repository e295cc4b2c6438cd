/** Canvas rendering of the server-binned bootstrap histogram.
 *
 * The server fixes the bin count (200) and the density grid; this module
 * only maps those numbers onto pixels. binRects/densityPath are pure so
 * the bins-in = bars-out property is testable without a browser.
 */

import { HistogramPayload, ModalityPayload, Verdict } from "./api.js";

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

/** One bar per server bin, heights exactly proportional to bin_counts. */
export function binRects(
  edges: number[],
  counts: number[],
  width: number,
  height: number,
): Rect[] {
  if (edges.length !== counts.length + 1) {
    throw new Error(
      `bin_edges (${edges.length}) must be one longer than bin_counts (${counts.length})`,
    );
  }
  const lo = edges[0];
  const span = edges[edges.length - 1] - lo || 1;
  const maxCount = Math.max(...counts, 1);
  return counts.map((count, i) => {
    const x0 = ((edges[i] - lo) / span) * width;
    const x1 = ((edges[i + 1] - lo) / span) * width;
    const h = (count / maxCount) * height;
    return { x: x0, y: height - h, w: x1 - x0, h };
  });
}

/** Density curve points scaled into the same pixel space as the bars. */
export function densityPath(
  xs: number[],
  ys: number[],
  xDomain: [number, number],
  width: number,
  height: number,
): Array<[number, number]> {
  const [lo, hi] = xDomain;
  const span = hi - lo || 1;
  const maxY = Math.max(...ys, Number.MIN_VALUE);
  return xs.map((x, i) => [
    ((x - lo) / span) * width,
    height - (ys[i] / maxY) * height,
  ]);
}

export const VERDICT_COLORS: Record<Verdict, string> = {
  UNIMODAL: "#15803d",
  NOISY: "#b45309",
  MULTIMODAL: "#b91c1c",
};

export function drawHistogram(
  canvas: HTMLCanvasElement,
  histogram: HistogramPayload | null,
  modality: ModalityPayload | null,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);

  if (!histogram || !modality) {
    ctx.fillStyle = "#6b7280";
    ctx.font = "14px system-ui, sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("no histogram yet - move the limit slider", width / 2, height / 2);
    return;
  }

  const pad = 8;
  const plotW = width - 2 * pad;
  const plotH = height - 2 * pad;

  ctx.save();
  ctx.translate(pad, pad);

  ctx.fillStyle = "#93c5fd";
  for (const r of binRects(histogram.bin_edges, histogram.bin_counts, plotW, plotH)) {
    ctx.fillRect(r.x, r.y, Math.max(r.w - 0.5, 0.5), r.h);
  }

  const domain: [number, number] = [
    histogram.bin_edges[0],
    histogram.bin_edges[histogram.bin_edges.length - 1],
  ];
  const path = densityPath(
    modality.density.x,
    modality.density.y,
    domain,
    plotW,
    plotH,
  );
  ctx.strokeStyle = "#1d4ed8";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  for (let i = 0; i < path.length; i++) {
    const [x, y] = path[i];
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  }
  ctx.stroke();

  const maxDensity = Math.max(...modality.density.y, Number.MIN_VALUE);
  ctx.fillStyle = VERDICT_COLORS[modality.verdict];
  for (const peak of modality.peak_positions) {
    const px = ((peak.x - domain[0]) / (domain[1] - domain[0] || 1)) * plotW;
    const py = plotH - (peak.density / maxDensity) * plotH;
    ctx.beginPath();
    ctx.moveTo(px, py - 12);
    ctx.lineTo(px - 5, py - 3);
    ctx.lineTo(px + 5, py - 3);
    ctx.closePath();
    ctx.fill();
  }
  ctx.restore();
}
