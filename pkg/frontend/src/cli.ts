/** CLI: render --kind <kind> --in <csv...> --out <path>. */

import { readFileSync, writeFileSync, mkdirSync } from "node:fs";
import { dirname } from "node:path";
import { concatTables, parseMetricsCsv } from "./csv.js";
import { FIGURE_KINDS, FigureKind, render } from "./figures.js";

function usage(): string {
  return (
    "usage: saginfl-plots render --kind <kind> --in <csv> [<csv> ...] " +
    `--out <path.svg>\n  kinds: ${FIGURE_KINDS.join(", ")}`
  );
}

export function main(argv: string[]): number {
  try {
    if (argv[0] !== "render") {
      throw new Error(usage());
    }
    let kind: string | undefined;
    const inputs: string[] = [];
    let out: string | undefined;
    for (let i = 1; i < argv.length; i++) {
      const arg = argv[i];
      if (arg === "--kind") {
        kind = argv[++i];
      } else if (arg === "--in") {
        while (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
          inputs.push(argv[++i]);
        }
      } else if (arg === "--out") {
        out = argv[++i];
      } else {
        throw new Error(`unknown argument ${arg}\n${usage()}`);
      }
    }
    if (!kind || !FIGURE_KINDS.includes(kind as FigureKind)) {
      throw new Error(`--kind must be one of ${FIGURE_KINDS.join(", ")}`);
    }
    if (inputs.length === 0 || !out) {
      throw new Error(usage());
    }
    const tables = inputs.map((path) =>
      parseMetricsCsv(readFileSync(path, "utf-8"), path),
    );
    const svg = render({ kind: kind as FigureKind, table: concatTables(tables) });
    mkdirSync(dirname(out), { recursive: true });
    writeFileSync(out, svg, "utf-8");
    console.log(`wrote ${out}`);
    return 0;
  } catch (err) {
    console.error(`ERROR ${JSON.stringify({ message: String(err instanceof Error ? err.message : err) })}`);
    return 2;
  }
}

main(process.argv.slice(2));
