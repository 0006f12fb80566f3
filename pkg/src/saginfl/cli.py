"""Command-line entry points: run, baseline, sweep, summarize.

Exit code 0 on success; on failure a single machine-readable line
``ERROR {json}`` goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import (ScenarioConfig, TrainConfig, load_scenario, load_train,
                     save_scenario)
from .harness import (DEFAULT_SWEEP_VALUES, POLICIES, SWEEP_AXES,
                      ExperimentSpec, emit_summary, run_experiment)


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise ValueError(f"bad seed list {text!r}") from exc


def _load_configs(args) -> tuple[ScenarioConfig, TrainConfig]:
    scenario = load_scenario(args.config) if args.config else ScenarioConfig()
    train = load_train(args.train_config) if args.train_config \
        else (load_train(args.config) if args.config and _has_train(args.config)
              else TrainConfig())
    if args.steps is not None:
        train.total_steps = args.steps
    return scenario, train


def _has_train(path: str) -> bool:
    import yaml
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    return isinstance(data, dict) and "train" in data


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="scenario YAML (flat key/value)")
    parser.add_argument("--train-config", help="training YAML")
    parser.add_argument("--seeds", default="0,1,2,3,4",
                        help="comma-separated seed list")
    parser.add_argument("--out", default="runs", help="output directory")
    parser.add_argument("--steps", type=int, default=None,
                        help="override training steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saginfl",
        description="Hierarchical federated learning over a space-air-ground "
                    "network, driven by a hybrid-action DSAC agent.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train+evaluate one policy")
    _add_common(p_run)
    p_run.add_argument("--policy", default="HDSAC", choices=POLICIES)

    p_base = sub.add_parser("baseline", help="run a named baseline policy")
    _add_common(p_base)
    p_base.add_argument("name", choices=POLICIES)

    p_sweep = sub.add_parser("sweep", help="sweep a scenario axis")
    _add_common(p_sweep)
    p_sweep.add_argument("--policy", default="HDSAC", choices=POLICIES)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", default=None,
                         help="comma-separated sweep values")

    p_sum = sub.add_parser("summarize", help="aggregate metrics CSVs")
    p_sum.add_argument("csvs", nargs="+", help="metrics CSV paths")
    p_sum.add_argument("--out", default=None, help="summary CSV path")

    p_show = sub.add_parser("show-config", help="print scenario defaults")
    p_show.add_argument("--out", default=None, help="write YAML here")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "summarize":
            summary = emit_summary([Path(p) for p in args.csvs],
                                   Path(args.out) if args.out else None)
            for row in summary:
                print(f"{row['policy']:24s} {row['sweep_axis']:16s} "
                      f"{row['sweep_value']:8g} "
                      f"acc={row['mean_accuracy']:.4f}"
                      f"+/-{row['std_accuracy']:.4f} "
                      f"spread={row['mean_spread']:.4f} "
                      f"(n={row['n_seeds']})")
            return 0
        if args.command == "show-config":
            cfg = ScenarioConfig()
            if args.out:
                save_scenario(cfg, args.out)
                print(f"wrote {args.out}")
            else:
                import dataclasses
                for key, value in dataclasses.asdict(cfg).items():
                    print(f"{key}: {value}")
            return 0

        scenario, train = _load_configs(args)
        seeds = _parse_seeds(args.seeds)
        if args.command == "run":
            spec = ExperimentSpec(policy=args.policy, seeds=seeds,
                                  scenario=scenario, train=train,
                                  outdir=Path(args.out))
        elif args.command == "baseline":
            spec = ExperimentSpec(policy=args.name, seeds=seeds,
                                  scenario=scenario, train=train,
                                  outdir=Path(args.out))
        else:  # sweep
            values = None
            if args.values:
                values = [float(v) for v in args.values.split(",")]
            spec = ExperimentSpec(policy=args.policy, seeds=seeds,
                                  sweep_axis=args.axis, sweep_values=values,
                                  scenario=scenario, train=train,
                                  outdir=Path(args.out))
        path = run_experiment(spec)
        print(f"wrote {path}")
        return 0
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        print("ERROR " + json.dumps({"type": type(exc).__name__,
                                     "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
