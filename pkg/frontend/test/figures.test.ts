import { describe, expect, it } from "vitest";
import { parseMetricsCsv } from "../src/csv.js";
import { render } from "../src/figures.js";

const HEADER = "# schema=saginfl.metrics.v1";
const COLS =
  "policy,sweep_axis,sweep_value,seed,episode,slot,reward,episode_return," +
  "mean_accuracy,accuracy_spread,acc_task_0,loss_task_0,acc_task_1,loss_task_1";

function timeRows(policy: string, seeds: number[], slots: number): string[] {
  const rows: string[] = [];
  for (const seed of seeds) {
    for (let t = 0; t < slots; t++) {
      const acc = 0.2 + 0.006 * t + 0.01 * seed;
      rows.push(
        [
          policy,
          "time",
          0,
          seed,
          0,
          t,
          0.1,
          0.1 * (t + 1),
          acc.toFixed(4),
          (0.08 - 0.0003 * t).toFixed(4),
          (acc - 0.02).toFixed(4),
          (1.5 - 0.01 * t).toFixed(4),
          (acc + 0.02).toFixed(4),
          (1.4 - 0.01 * t).toFixed(4),
        ].join(","),
      );
    }
  }
  return rows;
}

function sweepRows(axis: string, values: number[]): string[] {
  const rows: string[] = [];
  for (const v of values) {
    for (const seed of [0, 1]) {
      for (let t = 0; t < 3; t++) {
        const acc = 0.3 + 0.05 * values.indexOf(v) + 0.01 * seed;
        rows.push(
          [
            "HDSAC",
            axis,
            v,
            seed,
            0,
            t,
            0.1,
            0.1,
            acc.toFixed(4),
            "0.05",
            acc.toFixed(4),
            "1.0",
            acc.toFixed(4),
            "1.0",
          ].join(","),
        );
      }
    }
  }
  return rows;
}

function table(rows: string[]) {
  return parseMetricsCsv([HEADER, COLS, ...rows].join("\n"));
}

describe("time figures", () => {
  it("renders accuracy_vs_time with a curve per policy", () => {
    const svg = render({
      kind: "accuracy_vs_time",
      table: table([
        ...timeRows("HDSAC", [0, 1], 20),
        ...timeRows("Random", [0, 1], 20),
      ]),
    });
    expect(svg).toContain("<svg");
    expect(svg).toContain("HDSAC");
    expect(svg).toContain("Random");
    expect(svg).toContain("polygon"); // std band
  });

  it("renders loss_vs_time from per-task loss columns", () => {
    const svg = render({
      kind: "loss_vs_time",
      table: table(timeRows("HDSAC", [0], 10)),
    });
    expect(svg).toContain("Average loss");
  });

  it("is deterministic", () => {
    const t = table(timeRows("HDSAC", [0, 1], 12));
    const a = render({ kind: "accuracy_vs_time", table: t });
    const b = render({ kind: "accuracy_vs_time", table: t });
    expect(a).toBe(b);
  });
});

describe("fairness_pair", () => {
  it("contains exactly four labeled curves", () => {
    const svg = render({
      kind: "fairness_pair",
      table: table([
        ...timeRows("HDSAC", [0, 1], 15),
        ...timeRows("FixedReward", [0, 1], 15),
      ]),
    });
    for (const label of [
      "Task T1",
      "Task T2",
      "Task T1 Fixed Reward",
      "Task T2 Fixed Reward",
    ]) {
      expect(svg).toContain(`>${label}</text>`);
    }
    const legendCount = (svg.match(/class="legend-label"/g) ?? []).length;
    expect(legendCount).toBe(4);
  });

  it("fails loudly when one policy is absent", () => {
    expect(() =>
      render({
        kind: "fairness_pair",
        table: table(timeRows("HDSAC", [0], 5)),
      }),
    ).toThrow(/expected 4 curves/);
  });
});

describe("sweep figures", () => {
  it("renders the three sweep kinds", () => {
    const cases: [string, string, number[]][] = [
      ["power_sweep", "user_power", [0.05, 0.1, 0.2]],
      ["taskcount_sweep", "task_count_noniid", [2, 3, 4]],
      ["elevation_sweep", "elevation", [30, 40, 50]],
    ];
    for (const [kind, axis, values] of cases) {
      const svg = render({
        kind: kind as never,
        table: table(sweepRows(axis, values)),
      });
      expect(svg).toContain("<svg");
      expect(svg).toContain("HDSAC");
    }
  });

  it("reports empty-after-filter instead of a blank figure", () => {
    expect(() =>
      render({
        kind: "power_sweep",
        table: table(sweepRows("elevation", [30, 40])),
      }),
    ).toThrow(/no rows left after filtering/);
  });

  it("reports missing columns by name", () => {
    const bare = parseMetricsCsv(
      [
        HEADER,
        "policy,sweep_axis,sweep_value,seed,episode,slot",
        "HDSAC,user_power,0.1,0,0,0",
      ].join("\n"),
    );
    expect(() => render({ kind: "power_sweep", table: bare })).toThrow(
      /missing columns \[mean_accuracy\]/,
    );
  });
});
