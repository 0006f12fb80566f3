"""Experiment harness: policy training, baselines, sweeps, CSV metrics.

Every (policy, sweep-value, seed) combination trains its own agent on its
own environment and is then evaluated greedily on the same seed, so policy
comparisons share initial placements, datasets, and coverage windows.  All
randomness is derived from the run seed; a spec re-run reproduces its CSV
byte for byte.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, TrainConfig, scenario_with
from .env import SaginEnv
from .hybrid import HDsacAgent, full_masks, train_h_dsac

CSV_SCHEMA = "saginfl.metrics.v1"

POLICIES = ("HDSAC", "HDSAC_FedAvgWeights", "HDSAC_HoveringUav", "Random",
            "FixedReward")
SWEEP_AXES = ("time", "user_power", "task_count_iid", "task_count_noniid",
              "elevation")
DEFAULT_SWEEP_VALUES = {
    "time": [0.0],
    "user_power": [0.05, 0.1, 0.2],
    "task_count_iid": [2, 3, 4],
    "task_count_noniid": [2, 3, 4],
    "elevation": [30.0, 40.0, 50.0],
}


@dataclass
class ExperimentSpec:
    policy: str
    seeds: list[int]
    sweep_axis: str = "time"
    sweep_values: list | None = None
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    outdir: Path = Path("runs")
    eval_episodes: int = 1
    tag: str = ""

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; "
                             f"expected one of {POLICIES}")
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep_axis!r}; "
                             f"expected one of {SWEEP_AXES}")
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        if self.sweep_values is None:
            self.sweep_values = list(DEFAULT_SWEEP_VALUES[self.sweep_axis])
        self.outdir = Path(self.outdir)


def scenario_for(policy: str, base: ScenarioConfig, axis: str,
                 value) -> ScenarioConfig:
    """Apply the policy's behavioral override and the sweep value."""
    overrides = {}
    if policy == "HDSAC_FedAvgWeights":
        overrides["force_fedavg_weights"] = True
    elif policy == "HDSAC_HoveringUav":
        overrides["force_hover"] = True
    elif policy == "FixedReward":
        overrides["fixed_alpha"] = True
    if axis == "user_power":
        overrides["tx_power_user_w"] = float(value)
    elif axis == "elevation":
        overrides["elevation_min_deg"] = float(value)
    elif axis == "task_count_iid":
        overrides["n_tasks"] = int(value)
        overrides["iid"] = True
    elif axis == "task_count_noniid":
        overrides["n_tasks"] = int(value)
        overrides["iid"] = False
    return scenario_with(base, **overrides)


class EnvAdapter:
    """Bridge between the agents' tanh-bounded outputs and the decoder.

    Velocities cross the boundary as arctanh so the decoder's tanh restores
    the agent's value exactly; weight heads are scaled to a logit span.
    """

    def __init__(self, env: SaginEnv, weight_logit_span: float = 1.0):
        self.env = env
        self.span = weight_logit_span
        self.obs_dim = env.obs_dim
        self.discrete_slots = env.discrete_slots
        self.cont_dim = env.cont_dim
        self._n_vel = 3 * env.cfg.n_uavs

    def reset(self, seed: int | None = None):
        return self.env.reset(seed)

    def action_masks(self):
        return self.env.action_masks()

    def raw_continuous(self, cont: np.ndarray) -> np.ndarray:
        raw = np.empty_like(cont)
        vel = np.clip(cont[:self._n_vel], -1.0 + 1e-12, 1.0 - 1e-12)
        raw[:self._n_vel] = np.arctanh(vel)
        raw[self._n_vel:] = cont[self._n_vel:] * self.span
        return raw

    def step(self, action):
        disc, cont = action
        decoded = self.env.decode_action(np.asarray(disc, dtype=np.int64),
                                         self.raw_continuous(cont))
        return self.env.step(decoded)


def make_agent(adapter: EnvAdapter, train_cfg: TrainConfig,
               seed: int) -> HDsacAgent:
    return HDsacAgent(adapter.obs_dim, adapter.discrete_slots,
                      adapter.cont_dim, train_cfg, seed=seed * 7919 + 13)


def _episode_hook(adapter: EnvAdapter):
    def hook(env, info):
        return {"mean_accuracy": info["mean_accuracy"],
                "accuracy_spread": info["accuracy_spread"],
                "gammas": info["gammas"]}
    return hook


def train_policy(policy: str, scenario: ScenarioConfig,
                 train_cfg: TrainConfig, seed: int
                 ) -> tuple[HDsacAgent | None, list[dict]]:
    """Train (or skip, for Random) and return the agent plus episode logs."""
    adapter = EnvAdapter(SaginEnv(scenario, seed=seed))
    if policy == "Random":
        return None, []
    agent = make_agent(adapter, train_cfg, seed)
    logs = train_h_dsac(adapter, agent,
                        total_steps=train_cfg.total_steps,
                        warmup_steps=train_cfg.warmup_steps,
                        update_every=train_cfg.update_every,
                        episode_hook=_episode_hook(adapter))
    return agent, logs


def evaluate_policy(policy: str, agent: HDsacAgent | None,
                    scenario: ScenarioConfig, seed: int,
                    episodes: int = 1) -> list[dict]:
    """Greedy evaluation episodes; returns one row dict per slot."""
    adapter = EnvAdapter(SaginEnv(scenario, seed=seed))
    rng = np.random.default_rng(seed * 104729 + 7)
    rows = []
    for ep in range(episodes):
        obs = adapter.reset()
        masks = np.concatenate([np.asarray(m, float)
                                for m in adapter.action_masks()])
        done = False
        slot = 0
        ep_return = 0.0
        while not done:
            if policy == "Random":
                action = _random_action(adapter, rng)
            else:
                action = agent.act(obs, masks, explore=False)
            obs, reward, done, info = adapter.step(action)
            masks = np.concatenate([np.asarray(m, float)
                                    for m in adapter.action_masks()])
            ep_return += reward
            row = {"episode": ep, "slot": slot, "reward": reward,
                   "episode_return": ep_return,
                   "mean_accuracy": info["mean_accuracy"],
                   "accuracy_spread": info["accuracy_spread"]}
            for f, (acc, loss) in enumerate(zip(info["gammas"],
                                                info["task_losses"])):
                row[f"acc_task_{f}"] = acc
                row[f"loss_task_{f}"] = loss
            rows.append(row)
            slot += 1
    return rows


def _random_action(adapter: EnvAdapter, rng: np.random.Generator):
    disc = np.array([rng.integers(0, n) for n in adapter.discrete_slots])
    masks = adapter.action_masks()
    for j, mask in enumerate(masks):
        allowed = np.flatnonzero(mask)
        if len(allowed) and disc[j] not in allowed:
            disc[j] = int(rng.choice(allowed))
    cont = rng.uniform(-1.0, 1.0, adapter.cont_dim)
    return disc, cont


def metric_columns(n_tasks: int) -> list[str]:
    cols = ["policy", "sweep_axis", "sweep_value", "seed", "episode", "slot",
            "reward", "episode_return", "mean_accuracy", "accuracy_spread"]
    for f in range(n_tasks):
        cols.append(f"acc_task_{f}")
        cols.append(f"loss_task_{f}")
    return cols


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_metrics_csv(path: Path, rows: list[dict], n_tasks: int) -> Path:
    cols = metric_columns(n_tasks)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema={CSV_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in cols])
    return path


def read_metrics_csv(path: Path) -> tuple[list[str], list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != f"# schema={CSV_SCHEMA}":
            raise ValueError(f"{path}: unsupported metrics schema {header!r}")
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for key, value in raw.items():
                if key in ("policy", "sweep_axis"):
                    row[key] = value
                elif key in ("seed", "episode", "slot"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
        return reader.fieldnames or [], rows


def run_experiment(spec: ExperimentSpec) -> Path:
    """Train and evaluate per (sweep value, seed); write one metrics CSV."""
    all_rows = []
    for value in spec.sweep_values:
        scenario = scenario_for(spec.policy, spec.scenario, spec.sweep_axis,
                                value)
        for seed in spec.seeds:
            agent, _ = train_policy(spec.policy, scenario, spec.train, seed)
            rows = evaluate_policy(spec.policy, agent, scenario, seed,
                                   episodes=spec.eval_episodes)
            for row in rows:
                row.update(policy=spec.policy, sweep_axis=spec.sweep_axis,
                           sweep_value=float(value), seed=seed)
            all_rows.extend(rows)
    name = f"{spec.policy}_{spec.sweep_axis}"
    if spec.tag:
        name += f"_{spec.tag}"
    return write_metrics_csv(spec.outdir / f"{name}.csv", all_rows,
                             spec.scenario.n_tasks)


def run_baseline(name: str, scenario: ScenarioConfig, seeds: list[int],
                 train_cfg: TrainConfig | None = None,
                 outdir: Path = Path("runs")) -> Path:
    """Run one named baseline policy on the fixed scenario."""
    if name not in POLICIES:
        raise ValueError(f"unknown baseline {name!r}; "
                         f"expected one of {POLICIES}")
    spec = ExperimentSpec(policy=name, seeds=seeds, sweep_axis="time",
                          scenario=scenario,
                          train=train_cfg or TrainConfig(), outdir=outdir)
    return run_experiment(spec)


def final_slot_rows(rows: list[dict]) -> list[dict]:
    """Last slot of each (policy, sweep_value, seed, episode) trajectory."""
    last: dict[tuple, dict] = {}
    for row in rows:
        key = (row["policy"], row["sweep_value"], row["seed"],
               row["episode"])
        if key not in last or row["slot"] > last[key]["slot"]:
            last[key] = row
    return list(last.values())


def emit_summary(csv_paths: list[Path], out_path: Path | None = None
                 ) -> list[dict]:
    """Aggregate final-slot metrics per (policy, sweep value).

    Population standard deviation over seeds, matching the documented
    convention of the metrics schema.
    """
    if not csv_paths:
        raise ValueError("need at least one metrics CSV")
    rows = []
    for path in csv_paths:
        _, file_rows = read_metrics_csv(Path(path))
        rows.extend(file_rows)
    finals = final_slot_rows(rows)
    groups: dict[tuple, list[dict]] = {}
    for row in finals:
        groups.setdefault((row["policy"], row["sweep_axis"],
                           row["sweep_value"]), []).append(row)
    summary = []
    for (policy, axis, value), members in sorted(groups.items()):
        accs = np.array([m["mean_accuracy"] for m in members])
        spreads = np.array([m["accuracy_spread"] for m in members])
        returns = np.array([m["episode_return"] for m in members])
        summary.append({
            "policy": policy, "sweep_axis": axis, "sweep_value": value,
            "n_seeds": len(members),
            "mean_accuracy": float(accs.mean()),
            "std_accuracy": float(accs.std()),
            "mean_spread": float(spreads.mean()),
            "std_spread": float(spreads.std()),
            "mean_return": float(returns.mean()),
            "std_return": float(returns.std()),
        })
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        cols = list(summary[0].keys())
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# schema={CSV_SCHEMA}.summary\n")
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in summary:
                writer.writerow([_fmt(row[c]) for c in cols])
    return summary
