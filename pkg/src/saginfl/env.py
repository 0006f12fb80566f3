"""The slot-synchronous MDP over the three-layer network.

Each slot: the UAVs move, every user trains one local iteration of one task,
model transfers progress at the current link rates, due aggregations fire at
the slot boundary (edge -> cloud -> ISL relay -> final -> broadcast), orbits
and coverage windows advance, and the fairness reward is computed from the
latest global-model accuracies.

Per-task round pipeline.  A round for task f runs through an upload phase
(users -> UAVs -> satellites -> final-aggregation satellite) and a download
phase (final satellite -> per-UAV satellites -> UAVs -> users).  Stage
completions are detected at slot boundaries; a stage whose participants are
slow is force-fired with whatever arrived once the stage deadline passes, so
progress survives pairing churn.  Pairing changes drop in-flight transfers on
the affected link; the payload is re-uploaded from the source's current
state.  The final-aggregation satellite and downlink pairings are latched
per round when their stage begins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel, geometry, hfl
from .config import SPEED_OF_LIGHT, ScenarioConfig


@dataclass
class RewardParams:
    """Knobs of the time-decaying fairness reward."""

    alpha_decay: float = 0.995
    eps_c1: float = 200.0
    eps_c2: float = 100.0
    eps_f: float = 0.01
    gamma_floor: float = 0.01

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha_decay < 1.0:
            raise ValueError("alpha_decay must lie in (0, 1)")
        if self.eps_f <= 0.0:
            raise ValueError("eps_f must be positive")
        if self.gamma_floor <= 0.0:
            raise ValueError("gamma_floor must be positive")


def fairness_reward(gammas: np.ndarray, alpha: float,
                    params: RewardParams) -> float:
    """Time-decaying mixture of raw performance and deviation-from-mean.

    ``r = (alpha/F) sum (g_f/eps_c1)/eps_f
        + ((1-alpha)/F) sum (g_f/eps_c2)/(eps_f + |mean(g)/g_f - 1|)``

    Accuracies are floored at ``gamma_floor`` before use; the mean-over-tasks
    ratio is undefined at zero.
    """
    g = np.maximum(np.asarray(gammas, dtype=np.float64), params.gamma_floor)
    f_count = len(g)
    mean_g = float(np.mean(g))
    first = np.sum((g / params.eps_c1) / params.eps_f) * alpha / f_count
    dev = np.abs(mean_g / g - 1.0)
    second = np.sum((g / params.eps_c2) / (params.eps_f + dev)) \
        * (1.0 - alpha) / f_count
    return float(first + second)


@dataclass
class HybridAction:
    """Decoded, feasible joint action for one slot."""

    user_cluster: np.ndarray          # (K,) uav index per user
    uav_sat_up: np.ndarray            # (M,) satellite index or -1 (idle)
    final_sat: int                    # satellite index or -1
    sat_uav_down: np.ndarray          # (M,) satellite index or -1
    uav_velocity: np.ndarray          # (M, 3) m/s, |v| <= v_max
    weight_logits_edge: np.ndarray    # (F, K)
    weight_logits_cloud: np.ndarray   # (F, M)
    weight_logits_final: np.ndarray   # (F, M + N)


@dataclass
class _Pipeline:
    """Mutable per-task round state."""

    phase: str = "up"                 # up | down
    round_index: int = 0
    phase_age: int = 0
    uploaded_users: set = field(default_factory=set)
    fresh_iters: dict = field(default_factory=dict)   # user -> iters this round
    edge_inbox: dict = field(default_factory=dict)    # uav -> list of entries
    edge_models: dict = field(default_factory=dict)   # uav -> entry
    edge_fired: set = field(default_factory=set)
    cloud_delivered: set = field(default_factory=set)  # uavs whose edge model arrived
    cloud_inbox: dict = field(default_factory=dict)   # sat -> list of entries
    cloud_fired: bool = False
    cloud_models: dict = field(default_factory=dict)  # sat -> entry
    final_sat: int = -1
    relay_done: set = field(default_factory=set)
    final_direct: list = field(default_factory=list)
    final_relayed: list = field(default_factory=list)
    global_entry: dict | None = None
    down_pairing: dict = field(default_factory=dict)  # uav -> sat
    sat_ready: set = field(default_factory=set)       # sats holding the global
    uav_ready: set = field(default_factory=set)
    users_done: set = field(default_factory=set)
    jobs: list = field(default_factory=list)
    completed_round: bool = False      # set on the slot a round finishes


class SaginEnv:
    """Deterministic, seedable SAGIN + hierarchical-FL environment."""

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.cfg = cfg
        self._seed = seed
        self.pass_seconds = geometry.coverage_time(
            geometry.coverage_arc(cfg.earth_radius_m, cfg.leo_altitude_m,
                                  cfg.elevation_min_rad),
            cfg.leo_speed_mps)
        self.reward_params = RewardParams(alpha_decay=cfg.alpha_decay,
                                          eps_c1=cfg.eps_c1,
                                          eps_c2=cfg.eps_c2,
                                          eps_f=cfg.eps_f,
                                          gamma_floor=cfg.gamma_floor)
        self._init_layout()
        self.reset(seed)

    # ------------------------------------------------------------------
    # layout
    # ------------------------------------------------------------------
    def _init_layout(self) -> None:
        cfg = self.cfg
        K, M, N, F = cfg.n_users, cfg.n_uavs, cfg.n_sats, cfg.n_tasks
        self.discrete_slots = [M] * K + [N] * M + [N] + [N] * M
        self.cont_dim = 3 * M + F * K + F * M + F * (M + N)
        base = K * M + 3 * M + M * N + (M + N) * F
        # per-(user, task) staleness rides along so learned aggregation
        # weights can react to lagging contributors
        self.obs_dim = base + (K * F if cfg.observe_staleness else 0)
        self.observation_layout = {
            "channel_mags": slice(0, K * M),
            "uav_positions": slice(K * M, K * M + 3 * M),
            "remaining_windows": slice(K * M + 3 * M, K * M + 3 * M + M * N),
            "node_accuracies": slice(K * M + 3 * M + M * N, base),
        }
        if cfg.observe_staleness:
            self.observation_layout["staleness"] = slice(base, self.obs_dim)

    # ------------------------------------------------------------------
    # reset
    # ------------------------------------------------------------------
    def reset(self, seed: int | None = None) -> np.ndarray:
        cfg = self.cfg
        if seed is not None:
            self._seed = seed
        self.rng = np.random.default_rng(self._seed)
        K, M, N, F = cfg.n_users, cfg.n_uavs, cfg.n_sats, cfg.n_tasks

        xy_users = self.rng.uniform(0.0, cfg.arena_size_m, size=(K, 2))
        self.users = [geometry.NodeState(
            kind=geometry.NodeKind.GROUND_USER,
            position=np.array([x, y, 0.0]), velocity=np.zeros(3),
            tx_power=cfg.tx_power_user_w) for x, y in xy_users]
        xy_uavs = self.rng.uniform(0.0, cfg.arena_size_m, size=(M, 2))
        self.uavs = [geometry.NodeState(
            kind=geometry.NodeKind.UAV,
            position=np.array([x, y, cfg.uav_init_alt_m]),
            velocity=np.zeros(3), tx_power=cfg.tx_power_uav_w,
            antenna_gain=cfg.uav_antenna_gain) for x, y in xy_uavs]

        elapsed, windows = geometry.init_coverage_windows(
            self.pass_seconds, N, M, cfg.sat_spacing_min_m,
            cfg.sat_spacing_max_m, cfg.leo_speed_mps, self.rng,
            random_phase=cfg.random_pass_phase,
            phase_fraction=cfg.pass_phase_fraction)
        self.sat_elapsed = elapsed
        # windows are satellite-level here; keep the (sat, uav) matrix shape
        self.windows = np.empty((M, N))
        for w in windows:
            self.windows[w.uav_id, w.satellite_id] = w.remaining_time
        self.sats = [geometry.NodeState(
            kind=geometry.NodeKind.LEO,
            position=np.array([geometry.sat_offset_from_elapsed(
                elapsed[n], self.pass_seconds, cfg.leo_speed_mps),
                0.0, cfg.leo_altitude_m]),
            velocity=np.array([cfg.leo_speed_mps, 0.0, 0.0]),
            tx_power=cfg.tx_power_sat_w,
            antenna_gain=cfg.leo_antenna_gain) for n in range(N)]

        self.specs, self.shards = hfl.gen_synthetic_tasks(
            F, K, cfg.effective_concentration(), self.rng,
            input_dim=cfg.input_dim, n_classes=cfg.n_classes,
            samples_min=cfg.samples_min, samples_max=cfg.samples_max,
            zero_prob=cfg.zero_dataset_prob, test_samples=cfg.test_samples,
            bits_per_parameter=cfg.bits_per_parameter,
            separation_min=cfg.task_separation_min,
            separation_max=cfg.task_separation_max,
            feature_scale_min=cfg.feature_scale_min,
            feature_scale_max=cfg.feature_scale_max,
            model_kind=cfg.model_kind, mlp_hidden=cfg.mlp_hidden,
            l2_penalty=cfg.l2_penalty)
        self.local_models = [
            {f: hfl.zero_model(self.specs[f]) for f in range(F)
             if self.shards[k][f].size > 0} for k in range(K)]
        self.task_pointer = [0] * K

        self.gammas = np.empty(F)
        self.task_losses = np.empty(F)
        for f in range(F):
            acc, loss = hfl.evaluate_task(hfl.zero_model(self.specs[f]),
                                          self.specs[f])
            self.gammas[f] = acc
            self.task_losses[f] = loss
        self.node_acc = np.tile(self.gammas, (M + N, 1))

        self.pipelines = [_Pipeline() for _ in range(F)]
        self.rounds_completed = [0] * F
        self.t = 0
        self.alpha = 1.0
        self._draw_fading()
        self._last_action: HybridAction | None = None
        return self.observe()

    # ------------------------------------------------------------------
    # channel state
    # ------------------------------------------------------------------
    def _draw_fading(self) -> None:
        """New small-scale fading and outdated-CSI draws for the next slot."""
        cfg = self.cfg
        K, M, N = cfg.n_users, cfg.n_uavs, cfg.n_sats
        self.ground_draws = [[channel.FadingDraw.sample(
            self.rng, cfg.rician_factor,
            geometry.distance(self.users[k], self.uavs[m]),
            cfg.uav_wavelength_m) for m in range(M)] for k in range(K)]
        doppler = cfg.doppler_hz()
        self.space_mag_sq = np.empty((N, M))
        for n in range(N):
            for m in range(M):
                d = geometry.distance(self.sats[n], self.uavs[m])
                h_hat = channel.sat_uav_coeff(
                    d, cfg.leo_antenna_gain, cfg.sat_wavelength_m,
                    -2.0 * math.pi * d / cfg.sat_wavelength_m)
                h = channel.outdated_csi(h_hat, doppler, d / SPEED_OF_LIGHT,
                                         self.rng)
                self.space_mag_sq[n, m] = abs(h) ** 2

    def _ground_mag_sq(self) -> np.ndarray:
        cfg = self.cfg
        K, M = cfg.n_users, cfg.n_uavs
        out = np.empty((K, M))
        for k in range(K):
            for m in range(M):
                d = geometry.distance(self.users[k], self.uavs[m])
                h = channel.ground_air_coeff(d, self.ground_draws[k][m],
                                             cfg.tau_los, cfg.tau_nlos)
                out[k, m] = abs(h) ** 2
        return out

    # ------------------------------------------------------------------
    # observation
    # ------------------------------------------------------------------
    def observe(self) -> np.ndarray:
        cfg = self.cfg
        mags = self._ground_mag_sq().reshape(-1)
        log_mags = np.log10(np.maximum(mags, 1e-300))
        chan = np.clip((log_mags + 6.0) / 4.0, 0.0, 1.0)  # [-6,-2] band
        pos = np.concatenate([
            np.array([u.position[0] / cfg.arena_size_m,
                      u.position[1] / cfg.arena_size_m,
                      u.position[2] / cfg.z_max_m]) for u in self.uavs])
        win = (self.windows / self.pass_seconds).reshape(-1)
        accs = self.node_acc.reshape(-1)
        parts = [chan, pos, win, accs]
        if cfg.observe_staleness:
            stale = np.zeros((cfg.n_users, cfg.n_tasks))
            for k in range(cfg.n_users):
                for f, model in self.local_models[k].items():
                    stale[k, f] = min(model.staleness, 10) / 10.0
            parts.append(stale.reshape(-1))
        return np.concatenate(parts)

    def action_masks(self) -> list[np.ndarray]:
        """Per-slot categorical supports; expired satellites are masked.

        A slot with no live option keeps a full mask (the decoder resolves
        it to an idle assignment instead).
        """
        cfg = self.cfg
        K, M, N = cfg.n_users, cfg.n_uavs, cfg.n_sats
        masks = [np.ones(M, dtype=bool) for _ in range(K)]
        live_any = self.windows.max(axis=0) > 0.0
        for m in range(M):
            live = self.windows[m] > 0.0
            masks.append(live if live.any() else np.ones(N, dtype=bool))
        masks.append(live_any if live_any.any() else np.ones(N, dtype=bool))
        for m in range(M):
            live = self.windows[m] > 0.0
            masks.append(live if live.any() else np.ones(N, dtype=bool))
        return masks

    # ------------------------------------------------------------------
    # action decoding
    # ------------------------------------------------------------------
    def decode_action(self, raw_discrete: np.ndarray,
                      raw_continuous: np.ndarray) -> HybridAction:
        """Project raw agent outputs onto the feasible joint-action set.

        Categorical choices out of range are folded back with a modulus;
        choices of expired satellites are remapped to the live satellite
        with the longest remaining window, or to idle (-1) when none is
        visible.  Velocities are tanh-bounded per component and projected
        onto the speed ball; weight heads stay as logits and are normalized
        over the active members at aggregation time.
        """
        cfg = self.cfg
        K, M, N, F = cfg.n_users, cfg.n_uavs, cfg.n_sats, cfg.n_tasks
        raw_discrete = np.asarray(raw_discrete, dtype=np.int64)
        raw_continuous = np.asarray(raw_continuous, dtype=np.float64)
        if raw_discrete.shape != (len(self.discrete_slots),):
            raise ValueError("raw_discrete has the wrong length")
        if raw_continuous.shape != (self.cont_dim,):
            raise ValueError("raw_continuous has the wrong length")

        user_cluster = np.mod(raw_discrete[:K], M)

        def live_or_idle(choice: int, uav: int) -> int:
            choice = int(choice % N)
            if self.windows[uav, choice] > 0.0:
                return choice
            live = self.windows[uav] > 0.0
            if not live.any():
                return -1
            return int(np.argmax(np.where(live, self.windows[uav], -1.0)))

        uav_sat_up = np.array([live_or_idle(raw_discrete[K + m], m)
                               for m in range(M)], dtype=np.int64)
        total_windows = self.windows.sum(axis=0)
        final_choice = int(raw_discrete[K + M] % N)
        if total_windows[final_choice] <= 0.0:
            live = total_windows > 0.0
            final_choice = int(np.argmax(np.where(live, total_windows, -1.0))
                               ) if live.any() else -1
        sat_uav_down = np.array(
            [live_or_idle(raw_discrete[K + M + 1 + m], m) for m in range(M)],
            dtype=np.int64)

        vel = np.tanh(raw_continuous[:3 * M]).reshape(M, 3) * cfg.v_max_mps
        speeds = np.linalg.norm(vel, axis=1)
        over = speeds > cfg.v_max_mps
        vel[over] *= (cfg.v_max_mps / speeds[over])[:, None]
        if cfg.force_hover:
            vel = np.zeros_like(vel)

        off = 3 * M
        w_edge = raw_continuous[off:off + F * K].reshape(F, K)
        off += F * K
        w_cloud = raw_continuous[off:off + F * M].reshape(F, M)
        off += F * M
        w_final = raw_continuous[off:off + F * (M + N)].reshape(F, M + N)

        return HybridAction(user_cluster=user_cluster,
                            uav_sat_up=uav_sat_up, final_sat=final_choice,
                            sat_uav_down=sat_uav_down, uav_velocity=vel,
                            weight_logits_edge=w_edge,
                            weight_logits_cloud=w_cloud,
                            weight_logits_final=w_final)

    def _member_weights(self, logits: np.ndarray, ids: list[int],
                        sizes: list[float]) -> np.ndarray:
        """Softmax over the active members, optionally FedAvg-anchored."""
        cfg = self.cfg
        sizes = np.asarray(sizes, dtype=np.float64)
        if cfg.weight_anchor == "fedavg" or cfg.force_fedavg_weights:
            anchor = np.log(np.maximum(sizes / sizes.sum(), 1e-12))
        else:
            anchor = np.zeros(len(ids))
        agent = np.zeros(len(ids)) if cfg.force_fedavg_weights \
            else np.asarray([logits[i] for i in ids])
        z = agent + anchor
        z -= z.max()
        w = np.exp(z)
        return w / w.sum()

    # ------------------------------------------------------------------
    # reward
    # ------------------------------------------------------------------
    def reward(self, gammas: np.ndarray, t: int) -> float:
        alpha = 1.0 if self.cfg.fixed_alpha \
            else self.reward_params.alpha_decay ** t
        return fairness_reward(gammas, alpha, self.reward_params)

    # ------------------------------------------------------------------
    # step
    # ------------------------------------------------------------------
    def step(self, action: HybridAction):
        cfg = self.cfg
        if not isinstance(action, HybridAction):
            raise TypeError("step expects a decoded HybridAction")
        self._last_action = action

        for m, uav in enumerate(self.uavs):
            self.uavs[m] = geometry.move_uav(
                uav, action.uav_velocity[m], cfg.slot_seconds,
                v_max=cfg.v_max_mps, z_min=cfg.z_min_m, z_max=cfg.z_max_m,
                xy_min=-cfg.arena_margin_m,
                xy_max=cfg.arena_size_m + cfg.arena_margin_m)

        self._train_users()
        ground_mag = self._ground_mag_sq()
        self._sync_jobs(action)
        self._advance_jobs(action, ground_mag)
        self._progress_pipelines(action)

        self.sats, _ = geometry.advance_orbits(self.sats, [],
                                               cfg.slot_seconds)
        self.windows = np.maximum(0.0, self.windows - cfg.slot_seconds)
        reward = self.reward(self.gammas, self.t)
        if not cfg.fixed_alpha:
            self.alpha *= self.reward_params.alpha_decay
        self.t += 1

        done = self.t >= cfg.horizon_slots or bool(
            (self.windows <= 0.0).all())
        self._draw_fading()
        info = {
            "gammas": self.gammas.copy(),
            "task_losses": self.task_losses.copy(),
            "mean_accuracy": float(np.mean(self.gammas)),
            "accuracy_spread": float(np.max(self.gammas)
                                     - np.min(self.gammas)),
            "rounds_completed": list(self.rounds_completed),
            "idle_uavs": [int(m) for m in range(cfg.n_uavs)
                          if action.uav_sat_up[m] < 0],
            "round_finished": [p.completed_round for p in self.pipelines],
        }
        for p in self.pipelines:
            p.completed_round = False
        return self.observe(), reward, done, info

    # ------------------------------------------------------------------
    # local training
    # ------------------------------------------------------------------
    def _train_users(self) -> None:
        """One local iteration per user on its next unsubmitted task.

        A task already submitted for the current round (or in its download
        phase) is frozen for that user until the new global model arrives;
        training past the upload snapshot would be discarded at the next
        sync anyway.
        """
        cfg = self.cfg
        for k in range(cfg.n_users):
            tasks = sorted(self.local_models[k].keys())
            eligible = [f for f in tasks
                        if self.pipelines[f].phase == "up"
                        and k not in self.pipelines[f].uploaded_users
                        and self.pipelines[f].fresh_iters.get(k, 0)
                        < cfg.local_iters_per_round]
            if not eligible:
                continue
            f = eligible[self.task_pointer[k] % len(eligible)]
            self.task_pointer[k] += 1
            pipe = self.pipelines[f]
            pipe.fresh_iters[k] = pipe.fresh_iters.get(k, 0) + 1
            model = self.local_models[k][f]
            self.local_models[k][f] = hfl.local_train_step(
                model, self.shards[k][f], self.specs[f], cfg.learning_rate)

    # ------------------------------------------------------------------
    # transfer management
    # ------------------------------------------------------------------
    def _sync_jobs(self, action: HybridAction) -> None:
        """Create missing jobs and drop ones invalidated by re-pairing."""
        cfg = self.cfg
        for f, pipe in enumerate(self.pipelines):
            spec = self.specs[f]
            keep = []
            for job in pipe.jobs:
                if job.direction == "edge_up":
                    user = job.src[1]
                    if action.user_cluster[user] != job.dst[1]:
                        continue  # dropped; re-created below
                elif job.direction == "cloud_up":
                    uav = job.src[1]
                    if action.uav_sat_up[uav] != job.dst[1]:
                        continue
                elif job.direction == "edge_down":
                    user = job.dst[1]
                    if action.user_cluster[user] != job.src[1]:
                        continue
                keep.append(job)
            pipe.jobs = keep
            have = {(j.direction, j.src, j.dst) for j in pipe.jobs}

            if pipe.phase == "up":
                self._sync_up_jobs(f, pipe, spec, action, have)
            else:
                self._sync_down_jobs(f, pipe, spec, action, have)

    def _sync_up_jobs(self, f, pipe, spec, action, have) -> None:
        cfg = self.cfg
        for k in range(cfg.n_users):
            if k in pipe.uploaded_users or f not in self.local_models[k]:
                continue
            if pipe.fresh_iters.get(k, 0) < cfg.local_iters_per_round:
                continue  # still training this round's contribution
            m = int(action.user_cluster[k])
            if m in pipe.edge_fired:
                continue  # this round's edge aggregation already closed
            key = ("edge_up", ("user", k), ("uav", m))
            if key not in have:
                model = self.local_models[k][f]
                pipe.jobs.append(hfl.TransferJob(
                    task_id=f, payload=model.params.copy(),
                    bits_remaining=spec.model_size_bits,
                    src=("user", k), dst=("uav", m), direction="edge_up",
                    meta={"size": self.shards[k][f].size,
                          "iters": model.local_iterations_done}))
        for m, entry in pipe.edge_models.items():
            if m in pipe.cloud_delivered:
                continue
            sat = int(action.uav_sat_up[m])
            if sat < 0:
                continue  # idle: no visible satellite this slot
            key = ("cloud_up", ("uav", m), ("sat", sat))
            if key not in have:
                pipe.jobs.append(hfl.TransferJob(
                    task_id=f, payload=entry["params"].copy(),
                    bits_remaining=spec.model_size_bits,
                    src=("uav", m), dst=("sat", sat), direction="cloud_up",
                    meta={"size": entry["size"], "iters": entry["iters"]}))
        if pipe.cloud_fired and pipe.final_sat >= 0:
            for sat, entry in pipe.cloud_models.items():
                if sat == pipe.final_sat or sat in pipe.relay_done:
                    continue
                key = ("isl", ("sat", sat), ("sat", pipe.final_sat))
                if key not in have:
                    pipe.jobs.append(hfl.TransferJob(
                        task_id=f, payload=entry["params"].copy(),
                        bits_remaining=spec.model_size_bits,
                        src=("sat", sat), dst=("sat", pipe.final_sat),
                        direction="isl",
                        meta={"size": entry["size"],
                              "iters": entry["iters"]}))

    def _sync_down_jobs(self, f, pipe, spec, action, have) -> None:
        cfg = self.cfg
        entry = pipe.global_entry
        for m, sat in pipe.down_pairing.items():
            if m in pipe.uav_ready:
                continue
            if sat not in pipe.sat_ready:
                key = ("cloud_down", ("sat", pipe.final_sat), ("sat", sat))
                if key not in have and sat != pipe.final_sat:
                    pipe.jobs.append(hfl.TransferJob(
                        task_id=f, payload=entry["params"].copy(),
                        bits_remaining=spec.model_size_bits,
                        src=("sat", pipe.final_sat), dst=("sat", sat),
                        direction="cloud_down", meta={}))
                continue
            key = ("sat_down", ("sat", sat), ("uav", m))
            if key not in have:
                pipe.jobs.append(hfl.TransferJob(
                    task_id=f, payload=entry["params"].copy(),
                    bits_remaining=spec.model_size_bits,
                    src=("sat", sat), dst=("uav", m), direction="sat_down",
                    meta={}))
        for m in pipe.uav_ready:
            for k in range(cfg.n_users):
                if k in pipe.users_done or f not in self.local_models[k]:
                    continue
                if int(action.user_cluster[k]) != m:
                    continue
                key = ("edge_down", ("uav", m), ("user", k))
                if key not in have:
                    pipe.jobs.append(hfl.TransferJob(
                        task_id=f, payload=entry["params"].copy(),
                        bits_remaining=spec.model_size_bits,
                        src=("uav", m), dst=("user", k),
                        direction="edge_down", meta={}))

    # ------------------------------------------------------------------
    # link rates
    # ------------------------------------------------------------------
    def _advance_jobs(self, action: HybridAction,
                      ground_mag: np.ndarray) -> None:
        cfg = self.cfg
        all_jobs = [job for pipe in self.pipelines for job in pipe.jobs]
        uplink_users = [job.src[1] for job in all_jobs
                        if job.direction == "edge_up"]
        uplink_uavs = [job.src[1] for job in all_jobs
                       if job.direction == "cloud_up"]
        ground_noise = cfg.ground_noise_w
        space_noise = cfg.space_noise()

        def rate_for(job: hfl.TransferJob) -> float:
            kind = job.direction
            if kind == "edge_up":
                k, m = job.src[1], job.dst[1]
                if cfg.interference_same_receiver_only:
                    rivals = [u for u in uplink_users if u != k
                              and int(action.user_cluster[u]) == m]
                else:
                    rivals = [u for u in uplink_users if u != k]
                co = [(cfg.tx_power_user_w, ground_mag[u, m]) for u in rivals]
                return channel.uplink_rate_user_uav(
                    cfg.bandwidth_ga_hz, cfg.tx_power_user_w,
                    ground_mag[k, m], co, ground_noise).rate
            if kind == "edge_down":
                m, k = job.src[1], job.dst[1]
                return channel.downlink_rate_uav_user(
                    cfg.bandwidth_ga_hz, cfg.tx_power_uav_w,
                    ground_mag[k, m], ground_noise).rate
            if kind == "cloud_up":
                m, n = job.src[1], job.dst[1]
                if self.windows[m, n] <= 0.0:
                    return 0.0
                co = [(cfg.tx_power_uav_w, self.space_mag_sq[n, u])
                      for u in uplink_uavs if u != m]
                return channel.uplink_rate_uav_sat(
                    cfg.bandwidth_ga_hz, cfg.tx_power_uav_w,
                    self.space_mag_sq[n, m], co, space_noise).rate
            if kind == "sat_down":
                n, m = job.src[1], job.dst[1]
                if self.windows[m, n] <= 0.0:
                    return 0.0
                return channel.downlink_rate_sat_uav(
                    cfg.bandwidth_ga_hz, cfg.tx_power_sat_w,
                    self.space_mag_sq[n, m], space_noise).rate
            # isl | cloud_down: inter-satellite hop
            a, b = job.src[1], job.dst[1]
            d = max(1e3, geometry.distance(self.sats[a], self.sats[b]))
            return channel.isl_rate(d, cfg.bandwidth_isl_hz,
                                    cfg.tx_power_sat_w, cfg.isl_peak_gain,
                                    cfg.isl_carrier_hz, cfg.thermal_noise_k)

        for pipe in self.pipelines:
            completed, active = hfl.advance_transfers(pipe.jobs, rate_for,
                                                      cfg.slot_seconds)
            pipe.jobs = active
            for job in completed:
                self._deliver(job, pipe)

    def _deliver(self, job: hfl.TransferJob, pipe: _Pipeline) -> None:
        f = job.task_id
        if job.direction == "edge_up":
            user, uav = job.src[1], job.dst[1]
            pipe.uploaded_users.add(user)
            pipe.edge_inbox.setdefault(uav, []).append({
                "id": user, "params": job.payload,
                "size": job.meta["size"], "iters": job.meta["iters"]})
        elif job.direction == "cloud_up":
            uav, sat = job.src[1], job.dst[1]
            pipe.cloud_delivered.add(uav)
            pipe.cloud_inbox.setdefault(sat, []).append(
                {"id": uav, "params": job.payload,
                 "size": job.meta["size"], "iters": job.meta["iters"]})
        elif job.direction == "isl":
            sat = job.src[1]
            pipe.relay_done.add(sat)
            pipe.final_relayed.append(
                {"id": sat, "params": job.payload,
                 "size": job.meta["size"], "iters": job.meta["iters"]})
        elif job.direction == "cloud_down":
            pipe.sat_ready.add(job.dst[1])
        elif job.direction == "sat_down":
            pipe.uav_ready.add(job.dst[1])
        elif job.direction == "edge_down":
            user = job.dst[1]
            pipe.users_done.add(user)
            model = self.local_models[user].get(f)
            if model is not None:
                self.local_models[user][f] = hfl.TaskModel(
                    task_id=f, params=job.payload.copy(),
                    local_iterations_done=model.local_iterations_done,
                    staleness=0)

    # ------------------------------------------------------------------
    # pipeline stage logic
    # ------------------------------------------------------------------
    def _progress_pipelines(self, action: HybridAction) -> None:
        cfg = self.cfg
        timeout = cfg.stage_timeout_slots
        for f, pipe in enumerate(self.pipelines):
            pipe.phase_age += 1
            if pipe.phase == "up":
                self._fire_edge(f, pipe, action, deadline=timeout)
                self._fire_cloud(f, pipe, action, deadline=2 * timeout)
                self._fire_final(f, pipe, action, deadline=3 * timeout)
            else:
                self._finish_down(f, pipe, deadline=2 * timeout)

    def _participants(self, f: int, uav: int, action: HybridAction
                      ) -> list[int]:
        return [k for k in range(self.cfg.n_users)
                if int(action.user_cluster[k]) == uav
                and f in self.local_models[k]]

    def _fire_edge(self, f: int, pipe: _Pipeline, action: HybridAction,
                   deadline: int) -> None:
        for m in range(self.cfg.n_uavs):
            if m in pipe.edge_fired:
                continue
            inbox = pipe.edge_inbox.get(m, [])
            members = self._participants(f, m, action)
            complete = members and all(
                any(e["id"] == k for e in inbox) for k in members)
            if not inbox:
                continue
            if complete or pipe.phase_age >= deadline:
                ids = [e["id"] for e in inbox]
                weights = self._member_weights(
                    action.weight_logits_edge[f], ids,
                    [max(1, e["size"]) for e in inbox])
                models = [hfl.TaskModel(task_id=f, params=e["params"],
                                        local_iterations_done=e["iters"])
                          for e in inbox]
                agg = hfl.edge_aggregate(
                    models, weights,
                    literal_prefactor=self.cfg.literal_aggregation_prefactor)
                size = sum(e["size"] for e in inbox)
                pipe.edge_models[m] = {"params": agg.params, "size": size,
                                       "iters": agg.local_iterations_done}
                pipe.edge_fired.add(m)
                acc, _ = hfl.evaluate_task(agg, self.specs[f])
                self.node_acc[m, f] = acc

    def _fire_cloud(self, f: int, pipe: _Pipeline, action: HybridAction,
                    deadline: int) -> None:
        if pipe.cloud_fired or not pipe.edge_fired:
            return
        # every UAV that can still produce an edge model must have fired,
        # and every produced edge model must have reached its satellite
        pending_uploads = [m for m in pipe.edge_models
                           if m not in pipe.cloud_delivered]
        pending_edges = [m for m in range(self.cfg.n_uavs)
                         if m not in pipe.edge_fired
                         and (pipe.edge_inbox.get(m)
                              or self._participants(f, m, action))]
        ready = not pending_uploads and not pending_edges
        timed_out = pipe.phase_age >= deadline and pipe.cloud_inbox
        if not (ready and pipe.cloud_inbox) and not timed_out:
            return
        final_sat = int(action.final_sat)
        if final_sat < 0:
            return  # no visible satellite anywhere; wait
        pipe.final_sat = final_sat
        for sat, inbox in pipe.cloud_inbox.items():
            if sat == final_sat:
                pipe.final_direct.extend(inbox)
                continue
            ids = [e["id"] for e in inbox]
            weights = self._member_weights(
                action.weight_logits_cloud[f], ids,
                [max(1, e["size"]) for e in inbox])
            models = [hfl.TaskModel(task_id=f, params=e["params"],
                                    local_iterations_done=e["iters"])
                      for e in inbox]
            agg = hfl.cloud_aggregate(
                models, weights,
                literal_prefactor=self.cfg.literal_aggregation_prefactor)
            size = sum(e["size"] for e in inbox)
            pipe.cloud_models[sat] = {"params": agg.params, "size": size,
                                      "iters": agg.local_iterations_done}
            acc, _ = hfl.evaluate_task(agg, self.specs[f])
            self.node_acc[self.cfg.n_uavs + sat, f] = acc
        pipe.cloud_fired = True

    def _fire_final(self, f: int, pipe: _Pipeline, action: HybridAction,
                    deadline: int) -> None:
        if not pipe.cloud_fired:
            return
        expected_relays = set(pipe.cloud_models) - pipe.relay_done
        ready = not expected_relays
        timed_out = pipe.phase_age >= deadline
        if not ready and not timed_out:
            return
        direct, relayed = pipe.final_direct, pipe.final_relayed
        if not direct and not relayed:
            self._restart_round(pipe, completed=False)
            return
        M = self.cfg.n_uavs
        ids = [e["id"] for e in direct] + [M + e["id"] for e in relayed]
        weights = self._member_weights(
            action.weight_logits_final[f], ids,
            [max(1, e["size"]) for e in direct + relayed])
        agg = hfl.final_aggregate(
            [hfl.TaskModel(task_id=f, params=e["params"],
                           local_iterations_done=e["iters"]) for e in direct],
            [hfl.TaskModel(task_id=f, params=e["params"],
                           local_iterations_done=e["iters"])
             for e in relayed],
            weights,
            literal_prefactor=self.cfg.literal_aggregation_prefactor)
        acc, loss = hfl.evaluate_task(agg, self.specs[f])
        self.gammas[f] = acc
        self.task_losses[f] = loss
        self.node_acc[M + pipe.final_sat, f] = acc
        pipe.global_entry = {"params": agg.params}
        pipe.phase = "down"
        pipe.phase_age = 0
        pipe.down_pairing = {m: (int(action.sat_uav_down[m])
                                 if action.sat_uav_down[m] >= 0
                                 else pipe.final_sat)
                             for m in range(M)}
        pipe.sat_ready = {pipe.final_sat}
        pipe.uav_ready = set()
        pipe.users_done = set()
        pipe.jobs = []  # any leftover upload traffic is abandoned

    def _finish_down(self, f: int, pipe: _Pipeline, deadline: int) -> None:
        everyone = {k for k in range(self.cfg.n_users)
                    if f in self.local_models[k]}
        if pipe.users_done >= everyone or pipe.phase_age >= deadline:
            for k in everyone - pipe.users_done:
                model = self.local_models[k][f]
                self.local_models[k][f] = hfl.TaskModel(
                    task_id=f, params=model.params,
                    local_iterations_done=model.local_iterations_done,
                    staleness=model.staleness + 1)
            self._restart_round(pipe, completed=True)

    def _restart_round(self, pipe: _Pipeline, completed: bool) -> None:
        f = self.pipelines.index(pipe)
        if completed:
            self.rounds_completed[f] += 1
            pipe.completed_round = True
        pipe.phase = "up"
        pipe.round_index += 1
        pipe.phase_age = 0
        pipe.uploaded_users = set()
        pipe.fresh_iters = {}
        pipe.edge_inbox = {}
        pipe.edge_models = {}
        pipe.edge_fired = set()
        pipe.cloud_delivered = set()
        pipe.cloud_inbox = {}
        pipe.cloud_fired = False
        pipe.cloud_models = {}
        pipe.final_sat = -1
        pipe.relay_done = set()
        pipe.final_direct = []
        pipe.final_relayed = []
        pipe.global_entry = None
        pipe.down_pairing = {}
        pipe.sat_ready = set()
        pipe.uav_ready = set()
        pipe.users_done = set()
        pipe.jobs = []
