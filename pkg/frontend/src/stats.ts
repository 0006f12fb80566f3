/** Grouping and mean/std aggregation over seeds. */

import { MetricRow } from "./csv.js";

export interface Series {
  label: string;
  x: number[];
  mean: number[];
  std: number[];
}

function meanStd(values: number[]): { mean: number; std: number } {
  const mean = values.reduce((a, b) => a + b, 0) / values.length;
  const variance =
    values.reduce((a, b) => a + (b - mean) * (b - mean), 0) / values.length;
  return { mean, std: Math.sqrt(variance) };
}

/**
 * Aggregate a per-slot metric into one series per group label, averaging the
 * (seed, episode) trajectories pointwise.  Slots present in only some
 * trajectories (early-terminated episodes) carry the seeds that reached them.
 */
export function timeSeries(
  rows: MetricRow[],
  metric: (r: MetricRow) => number,
  groupOf: (r: MetricRow) => string,
): Series[] {
  const groups = new Map<string, Map<number, number[]>>();
  for (const row of rows) {
    const label = groupOf(row);
    if (!groups.has(label)) groups.set(label, new Map());
    const bySlot = groups.get(label)!;
    if (!bySlot.has(row.slot)) bySlot.set(row.slot, []);
    bySlot.get(row.slot)!.push(metric(row));
  }
  const out: Series[] = [];
  for (const [label, bySlot] of [...groups.entries()].sort()) {
    const slots = [...bySlot.keys()].sort((a, b) => a - b);
    const series: Series = { label, x: [], mean: [], std: [] };
    for (const s of slots) {
      const { mean, std } = meanStd(bySlot.get(s)!);
      series.x.push(s);
      series.mean.push(mean);
      series.std.push(std);
    }
    out.push(series);
  }
  return out;
}

/** Final slot of each (policy, sweep_value, seed, episode) trajectory. */
export function finalSlotRows(rows: MetricRow[]): MetricRow[] {
  const last = new Map<string, MetricRow>();
  for (const row of rows) {
    const key = [row.policy, row.sweep_value, row.seed, row.episode].join("|");
    const prev = last.get(key);
    if (!prev || row.slot > prev.slot) last.set(key, row);
  }
  return [...last.values()];
}

/** One series per policy over the sweep axis, from final-slot metrics. */
export function sweepSeries(
  rows: MetricRow[],
  metric: (r: MetricRow) => number,
): Series[] {
  const finals = finalSlotRows(rows);
  const groups = new Map<string, Map<number, number[]>>();
  for (const row of finals) {
    if (!groups.has(row.policy)) groups.set(row.policy, new Map());
    const byValue = groups.get(row.policy)!;
    if (!byValue.has(row.sweep_value)) byValue.set(row.sweep_value, []);
    byValue.get(row.sweep_value)!.push(metric(row));
  }
  const out: Series[] = [];
  for (const [label, byValue] of [...groups.entries()].sort()) {
    const values = [...byValue.keys()].sort((a, b) => a - b);
    const series: Series = { label, x: [], mean: [], std: [] };
    for (const v of values) {
      const { mean, std } = meanStd(byValue.get(v)!);
      series.x.push(v);
      series.mean.push(mean);
      series.std.push(std);
    }
    out.push(series);
  }
  return out;
}
