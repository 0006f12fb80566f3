/** Minimal deterministic SVG line charts: mean lines with std bands. */

import { Series } from "./stats.js";

export interface ChartOptions {
  title: string;
  xLabel: string;
  yLabel: string;
  width?: number;
  height?: number;
}

const PALETTE = [
  "#1f77b4",
  "#d62728",
  "#2ca02c",
  "#9467bd",
  "#ff7f0e",
  "#8c564b",
  "#17becf",
  "#7f7f7f",
];

const MARGIN = { top: 36, right: 24, bottom: 46, left: 58 };

function fmt(v: number): string {
  return Number(v.toPrecision(6)).toString();
}

function niceTicks(lo: number, hi: number, count = 5): number[] {
  if (!(hi > lo)) return [lo];
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const err = (count * step) / span;
  const mult = err <= 0.15 ? 10 : err <= 0.35 ? 5 : err <= 0.75 ? 2 : 1;
  const s = step * mult;
  const ticks: number[] = [];
  for (let v = Math.ceil(lo / s) * s; v <= hi + 1e-12; v += s) {
    ticks.push(Number(v.toFixed(12)));
  }
  return ticks;
}

export function renderChart(series: Series[], opts: ChartOptions): string {
  if (series.length === 0 || series.every((s) => s.x.length === 0)) {
    throw new Error(`nothing to plot for "${opts.title}": empty series`);
  }
  const width = opts.width ?? 640;
  const height = opts.height ?? 420;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;

  let xLo = Infinity;
  let xHi = -Infinity;
  let yLo = Infinity;
  let yHi = -Infinity;
  for (const s of series) {
    for (let i = 0; i < s.x.length; i++) {
      xLo = Math.min(xLo, s.x[i]);
      xHi = Math.max(xHi, s.x[i]);
      yLo = Math.min(yLo, s.mean[i] - s.std[i]);
      yHi = Math.max(yHi, s.mean[i] + s.std[i]);
    }
  }
  if (xHi === xLo) xHi = xLo + 1;
  if (yHi === yLo) yHi = yLo + 1;
  const yPad = 0.05 * (yHi - yLo);
  yLo -= yPad;
  yHi += yPad;

  const px = (x: number) => MARGIN.left + ((x - xLo) / (xHi - xLo)) * plotW;
  const py = (y: number) =>
    MARGIN.top + plotH - ((y - yLo) / (yHi - yLo)) * plotH;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" ` +
      `height="${height}" viewBox="0 0 ${width} ${height}" ` +
      `font-family="Helvetica, Arial, sans-serif">`,
  );
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  parts.push(
    `<text x="${width / 2}" y="20" text-anchor="middle" font-size="14" ` +
      `font-weight="bold">${opts.title}</text>`,
  );

  // axes + ticks
  for (const t of niceTicks(xLo, xHi)) {
    const x = px(t);
    parts.push(
      `<line x1="${fmt(x)}" y1="${MARGIN.top}" x2="${fmt(x)}" ` +
        `y2="${MARGIN.top + plotH}" stroke="#dddddd" stroke-width="1"/>`,
    );
    parts.push(
      `<text x="${fmt(x)}" y="${MARGIN.top + plotH + 16}" ` +
        `text-anchor="middle" font-size="11">${fmt(t)}</text>`,
    );
  }
  for (const t of niceTicks(yLo, yHi)) {
    const y = py(t);
    parts.push(
      `<line x1="${MARGIN.left}" y1="${fmt(y)}" ` +
        `x2="${MARGIN.left + plotW}" y2="${fmt(y)}" stroke="#dddddd" ` +
        `stroke-width="1"/>`,
    );
    parts.push(
      `<text x="${MARGIN.left - 6}" y="${fmt(y + 4)}" text-anchor="end" ` +
        `font-size="11">${fmt(t)}</text>`,
    );
  }
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" ` +
      `height="${plotH}" fill="none" stroke="#333333"/>`,
  );
  parts.push(
    `<text x="${MARGIN.left + plotW / 2}" y="${height - 8}" ` +
      `text-anchor="middle" font-size="12">${opts.xLabel}</text>`,
  );
  parts.push(
    `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" ` +
      `font-size="12" transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">` +
      `${opts.yLabel}</text>`,
  );

  series.forEach((s, idx) => {
    const color = PALETTE[idx % PALETTE.length];
    if (s.x.length > 1) {
      const upper = s.x.map((x, i) => `${fmt(px(x))},${fmt(py(s.mean[i] + s.std[i]))}`);
      const lower = s.x
        .map((x, i) => `${fmt(px(x))},${fmt(py(s.mean[i] - s.std[i]))}`)
        .reverse();
      parts.push(
        `<polygon points="${[...upper, ...lower].join(" ")}" ` +
          `fill="${color}" opacity="0.15"/>`,
      );
    }
    const line = s.x.map((x, i) => `${fmt(px(x))},${fmt(py(s.mean[i]))}`);
    parts.push(
      `<polyline points="${line.join(" ")}" fill="none" stroke="${color}" ` +
        `stroke-width="1.8"/>`,
    );
    for (let i = 0; i < s.x.length; i++) {
      parts.push(
        `<circle cx="${fmt(px(s.x[i]))}" cy="${fmt(py(s.mean[i]))}" ` +
          `r="2.4" fill="${color}"/>`,
      );
    }
  });

  // legend
  series.forEach((s, idx) => {
    const color = PALETTE[idx % PALETTE.length];
    const y = MARGIN.top + 14 + idx * 16;
    const x = MARGIN.left + 10;
    parts.push(
      `<line x1="${x}" y1="${y - 4}" x2="${x + 22}" y2="${y - 4}" ` +
        `stroke="${color}" stroke-width="2.4"/>`,
    );
    parts.push(
      `<text x="${x + 28}" y="${y}" font-size="11" class="legend-label">` +
        `${s.label}</text>`,
    );
  });

  parts.push("</svg>");
  return parts.join("\n");
}
