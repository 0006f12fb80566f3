/** Parsing and validation of saginfl metrics CSVs (schema v1). */

export const SCHEMA = "saginfl.metrics.v1";

export interface MetricRow {
  policy: string;
  sweep_axis: string;
  sweep_value: number;
  seed: number;
  episode: number;
  slot: number;
  [column: string]: string | number;
}

export interface MetricsTable {
  columns: string[];
  rows: MetricRow[];
}

const STRING_COLUMNS = new Set(["policy", "sweep_axis"]);

export function parseMetricsCsv(text: string, source = "<csv>"): MetricsTable {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length < 2) {
    throw new Error(`${source}: empty or truncated metrics file`);
  }
  if (lines[0].trim() !== `# schema=${SCHEMA}`) {
    throw new Error(
      `${source}: unsupported schema header ${JSON.stringify(lines[0])}; ` +
        `expected "# schema=${SCHEMA}"`,
    );
  }
  const columns = lines[1].split(",").map((c) => c.trim());
  const rows: MetricRow[] = [];
  for (let i = 2; i < lines.length; i++) {
    const parts = lines[i].split(",");
    if (parts.length !== columns.length) {
      throw new Error(
        `${source}:${i + 1}: expected ${columns.length} fields, got ${parts.length}`,
      );
    }
    const row: Record<string, string | number> = {};
    for (let j = 0; j < columns.length; j++) {
      const name = columns[j];
      if (STRING_COLUMNS.has(name)) {
        row[name] = parts[j];
      } else {
        const value = Number(parts[j]);
        if (Number.isNaN(value)) {
          throw new Error(`${source}:${i + 1}: non-numeric ${name}=${parts[j]}`);
        }
        row[name] = value;
      }
    }
    rows.push(row as MetricRow);
  }
  return { columns, rows };
}

/** Assert that every named column exists; error lists what is missing. */
export function requireColumns(table: MetricsTable, needed: string[]): void {
  const missing = needed.filter((c) => !table.columns.includes(c));
  if (missing.length > 0) {
    throw new Error(
      `metrics schema mismatch: missing columns [${missing.join(", ")}]; ` +
        `available: [${table.columns.join(", ")}]`,
    );
  }
}

export function taskColumns(table: MetricsTable, prefix: string): string[] {
  return table.columns
    .filter((c) => c.startsWith(prefix))
    .sort(
      (a, b) => Number(a.slice(prefix.length)) - Number(b.slice(prefix.length)),
    );
}

export function concatTables(tables: MetricsTable[]): MetricsTable {
  if (tables.length === 0) {
    throw new Error("no metrics tables given");
  }
  const columns = tables[0].columns;
  for (const t of tables.slice(1)) {
    if (t.columns.join(",") !== columns.join(",")) {
      throw new Error(
        `metrics files disagree on columns: [${columns.join(", ")}] vs ` +
          `[${t.columns.join(", ")}]`,
      );
    }
  }
  return { columns, rows: tables.flatMap((t) => t.rows) };
}
