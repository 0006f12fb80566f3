/** The six figure kinds over the versioned metrics schema. */

import {
  MetricsTable,
  requireColumns,
  taskColumns,
} from "./csv.js";
import { Series, sweepSeries, timeSeries } from "./stats.js";
import { renderChart } from "./svg.js";

export const FIGURE_KINDS = [
  "accuracy_vs_time",
  "loss_vs_time",
  "fairness_pair",
  "power_sweep",
  "taskcount_sweep",
  "elevation_sweep",
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

export interface FigureSpec {
  kind: FigureKind;
  table: MetricsTable;
}

const BASE_COLUMNS = [
  "policy",
  "sweep_axis",
  "sweep_value",
  "seed",
  "episode",
  "slot",
];

function assertNonEmpty(series: Series[], kind: string): Series[] {
  if (series.length === 0 || series.every((s) => s.x.length === 0)) {
    throw new Error(`${kind}: no rows left after filtering`);
  }
  return series;
}

function sweepFigure(
  spec: FigureSpec,
  axes: string[],
  title: string,
  xLabel: string,
): string {
  requireColumns(spec.table, [...BASE_COLUMNS, "mean_accuracy"]);
  const rows = spec.table.rows.filter((r) => axes.includes(r.sweep_axis));
  const series = assertNonEmpty(
    sweepSeries(rows, (r) => r.mean_accuracy as number),
    spec.kind,
  );
  return renderChart(series, {
    title,
    xLabel,
    yLabel: "final mean test accuracy",
  });
}

export function render(spec: FigureSpec): string {
  switch (spec.kind) {
    case "accuracy_vs_time": {
      requireColumns(spec.table, [...BASE_COLUMNS, "mean_accuracy"]);
      const series = assertNonEmpty(
        timeSeries(
          spec.table.rows,
          (r) => r.mean_accuracy as number,
          (r) => r.policy,
        ),
        spec.kind,
      );
      return renderChart(series, {
        title: "Average test accuracy vs communication time",
        xLabel: "communication time (slots)",
        yLabel: "mean test accuracy",
      });
    }
    case "loss_vs_time": {
      requireColumns(spec.table, BASE_COLUMNS);
      const lossCols = taskColumns(spec.table, "loss_task_");
      if (lossCols.length === 0) {
        throw new Error(
          "loss_vs_time: missing columns [loss_task_*]; available: " +
            `[${spec.table.columns.join(", ")}]`,
        );
      }
      const series = assertNonEmpty(
        timeSeries(
          spec.table.rows,
          (r) =>
            lossCols.reduce((a, c) => a + (r[c] as number), 0) /
            lossCols.length,
          (r) => r.policy,
        ),
        spec.kind,
      );
      return renderChart(series, {
        title: "Average loss vs communication time",
        xLabel: "communication time (slots)",
        yLabel: "mean test loss",
      });
    }
    case "fairness_pair": {
      requireColumns(spec.table, [
        ...BASE_COLUMNS,
        "acc_task_0",
        "acc_task_1",
      ]);
      const rows = spec.table.rows.filter(
        (r) => r.policy === "HDSAC" || r.policy === "FixedReward",
      );
      const series: Series[] = [];
      for (const task of ["acc_task_0", "acc_task_1"]) {
        const human = task === "acc_task_0" ? "Task T1" : "Task T2";
        for (const policy of ["HDSAC", "FixedReward"]) {
          const subset = rows.filter((r) => r.policy === policy);
          const label = policy === "HDSAC" ? human : `${human} Fixed Reward`;
          const s = timeSeries(
            subset,
            (r) => r[task] as number,
            () => label,
          );
          series.push(...s);
        }
      }
      assertNonEmpty(series, spec.kind);
      if (series.length !== 4) {
        throw new Error(
          `fairness_pair: expected 4 curves (two tasks x dynamic/fixed), ` +
            `got ${series.length}; is one of HDSAC/FixedReward missing?`,
        );
      }
      return renderChart(series, {
        title: "Per-task accuracy: dynamic vs fixed reward",
        xLabel: "communication time (slots)",
        yLabel: "test accuracy",
      });
    }
    case "power_sweep":
      return sweepFigure(
        spec,
        ["user_power"],
        "Average test accuracy vs ground-user transmit power",
        "transmit power (W)",
      );
    case "taskcount_sweep":
      return sweepFigure(
        spec,
        ["task_count_iid", "task_count_noniid"],
        "Average test accuracy vs number of tasks",
        "number of tasks",
      );
    case "elevation_sweep":
      return sweepFigure(
        spec,
        ["elevation"],
        "Average test accuracy vs minimum coverage elevation angle",
        "minimum elevation angle (deg)",
      );
    default: {
      const bad: never = spec.kind;
      throw new Error(`unknown figure kind ${bad}`);
    }
  }
}
