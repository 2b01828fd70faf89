/**
 * Dependency-free SVG chart builders for the dashboard and query cards.
 */

import type { TraceRow } from './api';

function svgEl(width: number, height: number): string[] {
  return [
    `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}" xmlns="http://www.w3.org/2000/svg">`,
  ];
}

/** Horizontal bar chart of a (standardized) feature vector. */
export function featureBars(values: number[], width = 220, rowH = 9): string {
  const span = Math.max(1.0, ...values.map((v) => Math.abs(v)));
  const mid = width / 2;
  const parts = svgEl(width, values.length * rowH);
  values.forEach((v, i) => {
    const w = (Math.abs(v) / span) * (width / 2 - 2);
    const x = v >= 0 ? mid : mid - w;
    const fill = v >= 0 ? '#2c7fb8' : '#d95f0e';
    parts.push(
      `<rect x="${x.toFixed(1)}" y="${i * rowH + 1}" width="${Math.max(w, 0.5).toFixed(1)}" height="${rowH - 2}" fill="${fill}"></rect>`,
    );
  });
  parts.push(`<line x1="${mid}" y1="0" x2="${mid}" y2="${values.length * rowH}" stroke="#999" stroke-width="0.5"></line>`);
  parts.push('</svg>');
  return parts.join('');
}

interface Series {
  label: string;
  color: string;
  points: Array<[number, number]>;
}

/** Multi-series line chart with auto-scaled axes. */
export function lineChart(series: Series[], width = 420, height = 150): string {
  const all = series.flatMap((s) => s.points);
  if (all.length === 0) {
    return `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}"></svg>`;
  }
  const pad = 24;
  const xs = all.map((p) => p[0]);
  const ys = all.map((p) => p[1]);
  const x0 = Math.min(...xs);
  const x1 = Math.max(...xs, x0 + 1);
  const y0 = Math.min(...ys, 0);
  const y1 = Math.max(...ys, y0 + 1e-9);
  const sx = (x: number) => pad + ((x - x0) / (x1 - x0)) * (width - 2 * pad);
  const sy = (y: number) => height - pad - ((y - y0) / (y1 - y0)) * (height - 2 * pad);
  const parts = svgEl(width, height);
  parts.push(
    `<line x1="${pad}" y1="${height - pad}" x2="${width - pad}" y2="${height - pad}" stroke="#aaa"></line>`,
    `<line x1="${pad}" y1="${pad}" x2="${pad}" y2="${height - pad}" stroke="#aaa"></line>`,
    `<text x="${pad - 4}" y="${sy(y1) + 4}" font-size="9" text-anchor="end" fill="#666">${y1.toFixed(y1 >= 10 ? 0 : 2)}</text>`,
    `<text x="${pad - 4}" y="${height - pad + 4}" font-size="9" text-anchor="end" fill="#666">${y0.toFixed(y0 >= 10 ? 0 : 1)}</text>`,
  );
  series.forEach((s, si) => {
    if (s.points.length === 0) return;
    const d = s.points
      .map((p) => `${sx(p[0]).toFixed(1)},${sy(p[1]).toFixed(1)}`)
      .join(' ');
    parts.push(
      `<polyline points="${d}" fill="none" stroke="${s.color}" stroke-width="1.5"></polyline>`,
      `<text x="${width - pad}" y="${pad + 12 * si}" font-size="10" text-anchor="end" fill="${s.color}">${s.label}</text>`,
    );
  });
  parts.push('</svg>');
  return parts.join('');
}

export function queryErrorChart(trace: TraceRow[]): string {
  const clf: Array<[number, number]> = [];
  const prop: Array<[number, number]> = [];
  for (const row of trace) {
    if (row.clf_query_err !== null) clf.push([row.round, row.clf_query_err]);
    if (row.prop_query_err !== null) prop.push([row.round, row.prop_query_err]);
  }
  return lineChart([
    { label: 'classifier', color: '#2c7fb8', points: clf },
    { label: 'propagation', color: '#d7301f', points: prop },
  ]);
}

export function mutualErrorChart(trace: TraceRow[]): string {
  const pts: Array<[number, number]> = [];
  for (const row of trace) {
    if (row.mutual_excl_err !== null) pts.push([row.round, row.mutual_excl_err]);
  }
  return lineChart([{ label: 'mutually exclusive errors', color: '#756bb1', points: pts }]);
}
