// Satisfaction trend rendered as a dependency-free SVG polyline.

import type { TracePoint } from "./state.js";

export interface ChartGeometry {
  width: number;
  height: number;
  padding: number;
}

export const DEFAULT_GEOMETRY: ChartGeometry = { width: 420, height: 160, padding: 24 };

export interface ChartPoint {
  x: number;
  y: number;
  round: number;
  mean: number;
}

// ratings live on a fixed 1..7 scale; rounds spread across the x axis
export function tracePoints(trace: TracePoint[], geo: ChartGeometry = DEFAULT_GEOMETRY): ChartPoint[] {
  if (trace.length === 0) {
    return [];
  }
  const innerW = geo.width - 2 * geo.padding;
  const innerH = geo.height - 2 * geo.padding;
  const maxRound = Math.max(...trace.map((p) => p.round), 1);
  return trace.map((p) => ({
    x: geo.padding + (maxRound === 1 ? 0 : ((p.round - 1) / (maxRound - 1)) * innerW),
    y: geo.padding + (1 - (p.mean - 1) / 6) * innerH,
    round: p.round,
    mean: p.mean,
  }));
}

export function tracePath(trace: TracePoint[], geo: ChartGeometry = DEFAULT_GEOMETRY): string {
  const points = tracePoints(trace, geo);
  if (points.length === 0) {
    return "";
  }
  return points
    .map((p, i) => `${i === 0 ? "M" : "L"}${p.x.toFixed(1)},${p.y.toFixed(1)}`)
    .join(" ");
}

export function renderChartSvg(trace: TracePoint[], geo: ChartGeometry = DEFAULT_GEOMETRY): string {
  const path = tracePath(trace, geo);
  const points = tracePoints(trace, geo)
    .map((p) => `<circle cx="${p.x.toFixed(1)}" cy="${p.y.toFixed(1)}" r="3">` +
      `<title>round ${p.round}: ${p.mean.toFixed(2)}</title></circle>`)
    .join("");
  return (
    `<svg viewBox="0 0 ${geo.width} ${geo.height}" class="trend" role="img" ` +
    `aria-label="satisfaction per round">` +
    `<path d="${path}" fill="none" stroke="currentColor" stroke-width="2"/>` +
    points +
    `</svg>`
  );
}
