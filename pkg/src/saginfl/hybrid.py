"""Hybrid discrete/continuous control: decoupled DSAC sub-agents recoupled
into one factored policy under per-part KL trust regions.

The discrete and continuous halves of the action are learned by separate
distributional-SAC agents sharing the same experience stream.  A third
network (the coupled policy) is fitted to the product of the two sub-agent
policies by advantage-weighted distillation, with every accepted fit step
bounded by the discrete / continuous KL budgets; the coupled policy acts in
the environment once it has received its first accepted update.

With a degenerate discrete space (every slot has exactly one option) the
product policy collapses onto the continuous policy, which is then also the
exact KL minimizer for the coupled policy; in that case the wrapper runs the
continuous agent verbatim and its trajectories match plain DSAC bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .dsac import (LOG_2PI, SQUASH_EPS, DsacAgent, ReplayBuffer,
                   SquashedGaussianHead, clamp_std, clip_target,
                   gaussian_loglik_grads, soft_return_target)
from .nn import Adam, DenseNet, soft_update

_MASKED = -1e30


@dataclass
class KlBudget:
    """Trust-region thresholds for recoupling updates."""

    total: float
    discrete: float
    continuous: float

    def __post_init__(self) -> None:
        if min(self.total, self.discrete, self.continuous) <= 0.0:
            raise ValueError("KL budgets must be positive")


# ---------------------------------------------------------------------------
# categorical helpers
# ---------------------------------------------------------------------------

def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask > 0.5, logits, _MASKED)
    z = z - z.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - logsum
    return np.where(mask > 0.5, out, _MASKED)


def sample_categorical_rows(rng: np.random.Generator,
                            probs: np.ndarray) -> np.ndarray:
    """One draw per row of a (rows, options) probability matrix."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    return (u[:, None] > cdf).sum(axis=-1).clip(0, probs.shape[-1] - 1)


def kl_categorical(p_logits: np.ndarray, q_logits: np.ndarray,
                   mask: np.ndarray) -> np.ndarray:
    """KL(p || q) per row over the unmasked support."""
    logp = masked_log_softmax(p_logits, mask)
    logq = masked_log_softmax(q_logits, mask)
    p = np.where(mask > 0.5, np.exp(logp), 0.0)
    diff = np.where(mask > 0.5, logp - logq, 0.0)
    return (p * diff).sum(axis=-1)


def kl_diag_gaussian(mu1: np.ndarray, log_std1: np.ndarray, mu2: np.ndarray,
                     log_std2: np.ndarray) -> np.ndarray:
    """Per-dimension KL(N1 || N2); KL(N(0,1) || N(1,1)) = 0.5."""
    v1 = np.exp(2.0 * log_std1)
    v2 = np.exp(2.0 * log_std2)
    return log_std2 - log_std1 + (v1 + (mu1 - mu2) ** 2) / (2.0 * v2) - 0.5


def split_action(action: tuple[np.ndarray, np.ndarray]
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Lossless partition of a hybrid action into its two parts."""
    disc, cont = action
    return np.asarray(disc, dtype=np.int64), np.asarray(cont, dtype=np.float64)


def join_action(disc: np.ndarray, cont: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(disc, dtype=np.int64), np.asarray(cont, dtype=np.float64)


def one_hot(indices: np.ndarray, slots: list[int]) -> np.ndarray:
    """Concatenate per-slot one-hot encodings; accepts (B, n_slots) or
    (n_slots,)."""
    idx = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    total = sum(slots)
    out = np.zeros((idx.shape[0], total))
    off = 0
    for j, n in enumerate(slots):
        out[np.arange(idx.shape[0]), off + idx[:, j]] = 1.0
        off += n
    return out if np.asarray(indices).ndim == 2 else out[0]


def slot_slices(slots: list[int]) -> list[slice]:
    out, off = [], 0
    for n in slots:
        out.append(slice(off, off + n))
        off += n
    return out


def full_masks(slots: list[int], batch: int | None = None) -> np.ndarray:
    total = sum(slots)
    if batch is None:
        return np.ones(total)
    return np.ones((batch, total))


# ---------------------------------------------------------------------------
# discrete sub-agent
# ---------------------------------------------------------------------------

class DiscreteDsacAgent:
    """Distributional SAC over a product of small categorical slots.

    The critic consumes the state and the one-hot action; the actor is
    trained by exact expectation over each slot's support (no sampling
    through the categorical), which only needs sum(options) extra critic
    evaluations per sample.
    """

    def __init__(self, obs_dim: int, slots: list[int], cfg: TrainConfig,
                 seed: int = 0):
        self.obs_dim = obs_dim
        self.slots = list(slots)
        self.total = sum(slots)
        self.slices = slot_slices(slots)
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        h = list(cfg.hidden)
        h_pol = h if getattr(cfg, "discrete_policy_hidden", None) is None \
            else list(cfg.discrete_policy_hidden)
        self.policy = DenseNet([obs_dim, *h_pol, self.total], rng=self.rng)
        self.critic = DenseNet([obs_dim + self.total, *h, 2], rng=self.rng)
        self.policy_target = self.policy.copy()
        self.critic_target = self.critic.copy()
        self.opt_policy = Adam(self.policy, lr=cfg.lr_actor,
                               grad_clip=cfg.grad_clip)
        self.opt_critic = Adam(self.critic, lr=cfg.lr_critic,
                               grad_clip=cfg.grad_clip)
        self.log_temp = math.log(cfg.init_temperature)
        # fraction of the maximum joint entropy of the non-trivial slots;
        # low values let pairings settle instead of thrashing forever
        scale = getattr(cfg, "discrete_entropy_scale", 0.5)
        self.target_entropy = scale * sum(math.log(n) for n in slots if n > 1)
        self.buffer = ReplayBuffer(cfg.buffer_size, {
            "s": ((obs_dim,), np.float64),
            "a": ((self.total,), np.float64),
            "r": ((), np.float64),
            "s2": ((obs_dim,), np.float64),
            "done": ((), np.float64),
            "mask": ((self.total,), np.float64),
            "mask2": ((self.total,), np.float64),
        })
        self.step_count = 0

    @property
    def temperature(self) -> float:
        return math.exp(self.log_temp)

    # ---- policy evaluation ------------------------------------------------
    def _slot_log_probs(self, net: DenseNet, s: np.ndarray,
                        masks: np.ndarray) -> list[np.ndarray]:
        logits = net.forward(s)
        if logits.ndim == 1:
            logits = logits[None, :]
            masks = np.atleast_2d(masks)
        return [masked_log_softmax(logits[:, sl], masks[:, sl])
                for sl in self.slices]

    def act(self, obs: np.ndarray, masks: np.ndarray,
            explore: bool = True) -> np.ndarray:
        logps = self._slot_log_probs(self.policy, obs, masks)
        idx = np.empty(len(self.slots), dtype=np.int64)
        for j, logp in enumerate(logps):
            row = logp[0]
            if self.slots[j] == 1:
                idx[j] = 0
                continue
            if explore:
                probs = np.exp(np.maximum(row, -700.0))
                probs = probs / probs.sum()
                idx[j] = sample_categorical_rows(self.rng, probs[None, :])[0]
            else:
                idx[j] = int(np.argmax(row))
        return idx

    def sample_batch(self, net: DenseNet, s: np.ndarray, masks: np.ndarray):
        """Sample one action per row; returns (idx, onehot, logp_total)."""
        logps = self._slot_log_probs(net, s, masks)
        n = s.shape[0]
        idx = np.empty((n, len(self.slots)), dtype=np.int64)
        logp_total = np.zeros(n)
        for j, logp in enumerate(logps):
            if self.slots[j] == 1:
                idx[:, j] = 0
                logp_total += logp[:, 0]
                continue
            probs = np.exp(np.maximum(logp, -700.0))
            probs /= probs.sum(axis=-1, keepdims=True)
            choice = sample_categorical_rows(self.rng, probs)
            idx[:, j] = choice
            logp_total += logp[np.arange(n), choice]
        return idx, one_hot(idx, self.slots), logp_total

    def observe(self, s, a_onehot, r, s2, done, mask, mask2) -> None:
        self.buffer.append(s=s, a=a_onehot, r=r, s2=s2, done=float(done),
                           mask=mask, mask2=mask2)

    # ---- learning ----------------------------------------------------------
    def _critic_heads(self, net: DenseNet, s: np.ndarray, a: np.ndarray,
                      want_tape: bool = False):
        x = np.concatenate([s, a], axis=1)
        if want_tape:
            out, tape = net.forward(x, want_tape=True)
        else:
            out, tape = net.forward(x), None
        q = out[:, 0]
        rho = clamp_std(out[:, 1], self.cfg.rho_min)
        return q, rho, out[:, 1], tape

    def critic_update(self, batch: dict) -> dict:
        cfg = self.cfg
        s, a, r = batch["s"], batch["a"], batch["r"]
        s2, done, mask2 = batch["s2"], batch["done"], batch["mask2"]
        n = len(r)
        _, onehot2, logp2 = self.sample_batch(self.policy_target, s2, mask2)
        q2, rho2, _, _ = self._critic_heads(self.critic_target, s2, onehot2)
        theta2 = q2 + rho2 * self.rng.standard_normal(n)
        m = soft_return_target(r, done, theta2, logp2, self.temperature,
                               cfg.discount)
        q, rho, rho_raw, tape = self._critic_heads(self.critic, s, a,
                                                   want_tape=True)
        y = clip_target(m, q, cfg.clip_factor)
        dq_ll, drho_ll = gaussian_loglik_grads(y, q, rho)
        dy = np.stack([-dq_ll / n, -(drho_ll / n) * (rho_raw > cfg.rho_min)],
                      axis=1)
        grads, _ = self.critic.backward(tape, dy)
        self.opt_critic.step(grads)
        return {"disc_target_mean": float(np.mean(y))}

    def _expected_q_all_options(self, s: np.ndarray,
                                a_onehot: np.ndarray) -> np.ndarray:
        """Critic means for each slot's options with the other slots fixed.

        Returns an array of shape (batch, total_options).
        """
        n = s.shape[0]
        rows_s, rows_a = [], []
        for j, sl in enumerate(self.slices):
            for i in range(self.slots[j]):
                variant = a_onehot.copy()
                variant[:, sl] = 0.0
                variant[:, sl.start + i] = 1.0
                rows_s.append(s)
                rows_a.append(variant)
        big_s = np.concatenate(rows_s)
        big_a = np.concatenate(rows_a)
        q, _, _, _ = self._critic_heads(self.critic, big_s, big_a)
        return q.reshape(self.total, n).T

    def actor_update(self, batch: dict) -> dict:
        s, a, mask = batch["s"], batch["a"], batch["mask"]
        n = len(s)
        out, tape = self.policy.forward(s, want_tape=True)
        nu = self.temperature
        q_all = self._expected_q_all_options(s, a)
        dlogits = np.zeros_like(out)
        entropy_acc = 0.0
        for j, sl in enumerate(self.slices):
            if self.slots[j] == 1:
                continue
            logp = masked_log_softmax(out[:, sl], mask[:, sl])
            p = np.where(mask[:, sl] > 0.5, np.exp(logp), 0.0)
            f = np.where(mask[:, sl] > 0.5, nu * logp - q_all[:, sl], 0.0)
            j_val = (p * f).sum(axis=-1, keepdims=True)
            dlogits[:, sl] = p * (f - j_val) / n
            entropy_acc += float(-(p * np.where(mask[:, sl] > 0.5, logp, 0.0)
                                   ).sum(axis=-1).mean())
        grads, _ = self.policy.backward(tape, dlogits)
        self.opt_policy.step(grads)
        # temperature from the sampled action's log-probability
        logp_sample = np.zeros(n)
        for j, sl in enumerate(self.slices):
            logp = masked_log_softmax(out[:, sl], mask[:, sl])
            chosen = np.argmax(a[:, sl], axis=-1)
            logp_sample += logp[np.arange(n), chosen]
        err = float(np.mean(logp_sample + self.target_entropy))
        self.log_temp += self.cfg.lr_temperature * nu * err
        self.log_temp = min(max(self.log_temp, -20.0), 5.0)
        return {"disc_entropy": entropy_acc, "disc_temperature": nu}

    def update(self) -> dict:
        if len(self.buffer) == 0:
            return {}
        batch = self.buffer.sample(self.rng, self.cfg.batch_size)
        metrics = self.critic_update(batch)
        metrics.update(self.actor_update(batch))
        soft_update(self.critic_target, self.critic, self.cfg.tau)
        soft_update(self.policy_target, self.policy, self.cfg.tau)
        self.step_count += 1
        return metrics


# ---------------------------------------------------------------------------
# coupled (recoupled) policy
# ---------------------------------------------------------------------------

class FactoredPolicy:
    """Joint policy with categorical heads and a tanh-Gaussian head.

    The joint density factorizes across slots and dimensions, so the
    log-probability is the sum of the per-slot categorical log-probabilities
    and the per-dimension squashed-Gaussian log-densities.
    """

    def __init__(self, obs_dim: int, slots: list[int], cont_dim: int,
                 hidden, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.slots = list(slots)
        self.total = sum(slots)
        self.slices = slot_slices(slots)
        self.cont_dim = cont_dim
        self.net = DenseNet([obs_dim, *list(hidden),
                             self.total + 2 * cont_dim], rng=rng)

    def heads(self, s: np.ndarray, want_tape: bool = False):
        if want_tape:
            out, tape = self.net.forward(s, want_tape=True)
        else:
            out, tape = self.net.forward(s), None
        squeeze = out.ndim == 1
        if squeeze:
            out = out[None, :]
        logits = out[:, :self.total]
        mu, log_std, dls = SquashedGaussianHead.split(out[:, self.total:],
                                                      self.cont_dim)
        return logits, mu, log_std, dls, tape, squeeze

    def sample(self, obs: np.ndarray, masks: np.ndarray,
               rng: np.random.Generator, explore: bool = True):
        logits, mu, log_std, _, _, _ = self.heads(obs)
        masks2d = np.atleast_2d(masks)
        idx = np.empty(len(self.slots), dtype=np.int64)
        for j, sl in enumerate(self.slices):
            if self.slots[j] == 1:
                idx[j] = 0
                continue
            logp = masked_log_softmax(logits[:, sl], masks2d[:, sl])[0]
            if explore:
                p = np.exp(np.maximum(logp, -700.0))
                p /= p.sum()
                idx[j] = sample_categorical_rows(rng, p[None, :])[0]
            else:
                idx[j] = int(np.argmax(logp))
        if explore:
            eps = rng.standard_normal(self.cont_dim)
            cont, _, _, _ = SquashedGaussianHead.sample(mu[0], log_std[0], eps)
        else:
            cont = np.tanh(mu[0])
        return idx, cont

    def sample_batch(self, s: np.ndarray, masks: np.ndarray,
                     rng: np.random.Generator):
        """Vectorized joint sampling; one action per row of ``s``."""
        logits, mu, log_std, _, _, _ = self.heads(s)
        n = np.atleast_2d(s).shape[0]
        masks2d = np.atleast_2d(masks)
        idx = np.empty((n, len(self.slots)), dtype=np.int64)
        for j, sl in enumerate(self.slices):
            if self.slots[j] == 1:
                idx[:, j] = 0
                continue
            logp = masked_log_softmax(logits[:, sl], masks2d[:, sl])
            p = np.exp(np.maximum(logp, -700.0))
            p /= p.sum(axis=-1, keepdims=True)
            idx[:, j] = sample_categorical_rows(rng, p)
        eps = rng.standard_normal((n, self.cont_dim))
        cont, _, _, _ = SquashedGaussianHead.sample(mu, log_std, eps)
        return idx, cont

    def log_prob(self, s: np.ndarray, masks: np.ndarray, disc_idx: np.ndarray,
                 cont_a: np.ndarray) -> np.ndarray:
        logits, mu, log_std, _, _, _ = self.heads(s)
        s2d = np.atleast_2d(s)
        n = s2d.shape[0]
        masks2d = np.atleast_2d(masks)
        idx2d = np.atleast_2d(disc_idx)
        cont2d = np.atleast_2d(cont_a)
        total = np.zeros(n)
        for j, sl in enumerate(self.slices):
            logp = masked_log_softmax(logits[:, sl], masks2d[:, sl])
            total += logp[np.arange(n), idx2d[:, j]]
        total += SquashedGaussianHead.logp_of_action(mu, log_std, cont2d)
        return total

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for p in self.net.get_params()]

    def restore(self, params: list[np.ndarray]) -> None:
        self.net.set_params(params)


# ---------------------------------------------------------------------------
# the hybrid agent
# ---------------------------------------------------------------------------

class HDsacAgent:
    """Two decoupled DSAC learners plus a KL-recoupled acting policy."""

    def __init__(self, obs_dim: int, slots: list[int], cont_dim: int,
                 cfg: TrainConfig, seed: int = 0):
        self.obs_dim = obs_dim
        self.slots = list(slots)
        self.total = sum(slots)
        self.cont_dim = cont_dim
        self.cfg = cfg
        self.degenerate = all(n == 1 for n in slots)
        self.continuous = DsacAgent(obs_dim, cont_dim, cfg, seed=seed)
        self.discrete = DiscreteDsacAgent(obs_dim, slots, cfg,
                                          seed=seed + 1_000_003)
        self.rng = np.random.default_rng(seed + 2_000_003)
        self.coupled = FactoredPolicy(obs_dim, slots, cont_dim, cfg.hidden,
                                      self.rng)
        h = list(cfg.hidden)
        self.qbar = DenseNet([obs_dim + self.total + cont_dim, *h, 1],
                             rng=self.rng)
        self.qbar_target = self.qbar.copy()
        self.opt_qbar = Adam(self.qbar, lr=cfg.lr_critic,
                             grad_clip=cfg.grad_clip)
        self.opt_coupled = Adam(self.coupled.net, lr=cfg.lr_coupled,
                                grad_clip=cfg.grad_clip)
        self.budget = KlBudget(total=cfg.kl_budget_total,
                               discrete=cfg.kl_budget_discrete,
                               continuous=cfg.kl_budget_continuous)
        self.coupled_ready = False
        self.updates_done = 0
        self.recouple_rejections = 0
        self.kl_trace: list[tuple[float, float]] = []
        self.buffer = ReplayBuffer(cfg.buffer_size, {
            "s": ((obs_dim,), np.float64),
            "a_d": ((self.total,), np.float64),
            "a_c": ((cont_dim,), np.float64),
            "r": ((), np.float64),
            "s2": ((obs_dim,), np.float64),
            "done": ((), np.float64),
            "mask": ((self.total,), np.float64),
            "mask2": ((self.total,), np.float64),
        })

    # ---- acting -------------------------------------------------------------
    def act(self, obs: np.ndarray, masks: np.ndarray | None = None,
            explore: bool = True) -> tuple[np.ndarray, np.ndarray]:
        if masks is None:
            masks = full_masks(self.slots)
        if self.degenerate:
            cont = self.continuous.act(obs, explore=explore)
            return np.zeros(len(self.slots), dtype=np.int64), cont
        if explore and self.coupled_ready:
            return self.coupled.sample(obs, masks, self.rng, explore=True)
        # deterministic queries use the product policy's greedy action; the
        # coupled policy is the (KL-projected) collection policy
        disc = self.discrete.act(obs, masks, explore=explore)
        cont = self.continuous.act(obs, explore=explore)
        return disc, cont

    def observe(self, s, action, r, s2, done, mask=None, mask2=None) -> None:
        disc, cont = split_action(action)
        if mask is None:
            mask = full_masks(self.slots)
        if mask2 is None:
            mask2 = full_masks(self.slots)
        onehot = one_hot(disc, self.slots)
        self.continuous.observe(s, cont, r, s2, done)
        if not self.degenerate:
            self.discrete.observe(s, onehot, r, s2, done, mask, mask2)
            self.buffer.append(s=s, a_d=onehot, a_c=cont, r=r, s2=s2,
                               done=float(done), mask=mask, mask2=mask2)

    # ---- learning -------------------------------------------------------------
    def update(self) -> dict:
        metrics = self.continuous.update()
        if self.degenerate:
            self.updates_done += 1
            return metrics
        metrics.update(self.discrete.update())
        self.updates_done += 1
        if self.updates_done % self.cfg.recouple_every == 0:
            metrics.update(self.recouple())
        return metrics

    # ---- Q-bar ------------------------------------------------------------------
    def _qbar_eval(self, net: DenseNet, s, a_d, a_c, want_tape=False):
        x = np.concatenate([s, a_d, a_c], axis=1)
        if want_tape:
            out, tape = net.forward(x, want_tape=True)
            return out[:, 0], tape
        return net.forward(x)[:, 0], None

    def _qbar_update(self, batch: dict) -> float:
        s, a_d, a_c = batch["s"], batch["a_d"], batch["a_c"]
        r, s2, done, mask2 = (batch["r"], batch["s2"], batch["done"],
                              batch["mask2"])
        idx2, cont2 = self.coupled.sample_batch(s2, mask2, self.rng)
        q2, _ = self._qbar_eval(self.qbar_target, s2, one_hot(idx2, self.slots),
                                cont2)
        y = r + self.cfg.discount * (1.0 - done) * q2
        q, tape = self._qbar_eval(self.qbar, s, a_d, a_c, want_tape=True)
        n = len(r)
        dy = np.zeros((n, 1))
        dy[:, 0] = (q - y) / n
        grads, _ = self.qbar.backward(tape, dy)
        self.opt_qbar.step(grads)
        soft_update(self.qbar_target, self.qbar, self.cfg.tau)
        return float(np.mean((q - y) ** 2))

    # ---- recoupling ------------------------------------------------------------
    def _measure_kls(self, s: np.ndarray, masks: np.ndarray,
                     old_params: list[np.ndarray]) -> tuple[float, float]:
        new_params = self.coupled.snapshot()
        logits_new, mu_new, ls_new, _, _, _ = self.coupled.heads(s)
        self.coupled.restore(old_params)
        logits_old, mu_old, ls_old, _, _, _ = self.coupled.heads(s)
        self.coupled.restore(new_params)
        kl_d_parts = []
        for j, sl in enumerate(self.coupled.slices):
            if self.slots[j] == 1:
                continue
            kl_d_parts.append(kl_categorical(logits_old[:, sl],
                                             logits_new[:, sl],
                                             masks[:, sl]))
        kl_d = float(np.mean(kl_d_parts)) if kl_d_parts else 0.0
        kl_c = float(np.mean(kl_diag_gaussian(mu_old, ls_old, mu_new, ls_new)))
        return kl_d, kl_c

    def _kl_product_to_coupled(self, s: np.ndarray,
                               masks: np.ndarray) -> float:
        """Mean KL from the product policy to the coupled policy."""
        logits_c, mu_c, ls_c, _, _, _ = self.coupled.heads(s)
        logits_d = self.discrete.policy.forward(s)
        out_a = self.continuous.actor.forward(s)
        mu_a, ls_a, _ = SquashedGaussianHead.split(out_a,
                                                   self.continuous.act_dim)
        parts = []
        for j, sl in enumerate(self.coupled.slices):
            if self.slots[j] == 1:
                continue
            parts.append(kl_categorical(logits_d[:, sl], logits_c[:, sl],
                                        masks[:, sl]))
        kl_d = float(np.mean(parts)) if parts else 0.0
        kl_c = float(np.mean(kl_diag_gaussian(mu_a, ls_a, mu_c, ls_c)))
        return kl_d + kl_c

    def recouple(self, n_steps: int | None = None) -> dict:
        """Fit the coupled policy to the weighted product policy.

        Samples actions from the product of the sub-agent policies, weights
        them by the softmax of their Q-bar values, and takes maximum
        likelihood steps on the coupled policy.  A step whose measured KL
        movement exceeds a per-part budget is retried with a halved step and
        finally rejected (coupled policy restored) if it cannot fit.

        The very first update is an unconstrained warm fit that pulls the
        freshly initialized coupled policy onto the product policy; the
        per-step trust regions bound policy *change* from then on.  Without
        it the budgets would never let the coupled policy catch up with the
        policy it is supposed to represent.
        """
        if self.degenerate or len(self.buffer) < self.cfg.batch_size:
            return {}
        cfg = self.cfg
        if not self.coupled_ready:
            self._warm_fit()
        steps = n_steps if n_steps is not None else cfg.recouple_steps
        batch = self.buffer.sample(self.rng, cfg.batch_size)
        qbar_loss = self._qbar_update(batch)
        s, masks = batch["s"], batch["mask"]
        n = len(s)
        n_a = cfg.recouple_samples

        # product-policy proposals, flattened to (n * n_a) rows
        s_rep = np.repeat(s, n_a, axis=0)
        mask_rep = np.repeat(masks, n_a, axis=0)
        idx_prop, onehot_prop, _ = self.discrete.sample_batch(
            self.discrete.policy, s_rep, mask_rep)
        pol = self.continuous._policy_sample_batch(self.continuous.actor,
                                                   s_rep, rng=self.rng)
        cont_prop = pol["a"]
        qvals, _ = self._qbar_eval(self.qbar, s_rep, onehot_prop, cont_prop)
        qmat = qvals.reshape(n, n_a) / max(cfg.recouple_eta, 1e-8)
        qmat = qmat - qmat.max(axis=1, keepdims=True)
        w = np.exp(qmat)
        w /= w.sum(axis=1, keepdims=True)
        w_flat = (w / n).reshape(-1)

        accepted = 0
        for _ in range(steps):
            old_params = self.coupled.snapshot()
            step_scale = 1.0
            ok = False
            for _attempt in range(4):
                grads = self._distill_grads(s_rep, mask_rep, idx_prop,
                                            cont_prop, w_flat)
                saved_lr = self.opt_coupled.lr
                self.opt_coupled.lr = saved_lr * step_scale
                self.opt_coupled.step(grads)
                self.opt_coupled.lr = saved_lr
                kl_d, kl_c = self._measure_kls(s, masks, old_params)
                if (kl_d < self.budget.discrete
                        and kl_c < self.budget.continuous
                        and kl_d + kl_c < self.budget.total):
                    ok = True
                    break
                self.coupled.restore(old_params)
                step_scale *= 0.5
            if ok:
                accepted += 1
                self.kl_trace.append((kl_d, kl_c))
            else:
                self.recouple_rejections += 1
                break
        if accepted:
            self.coupled_ready = True
        return {"recouple_accepted": accepted, "qbar_loss": qbar_loss,
                "recouple_rejected": int(not accepted)}

    def _warm_fit(self, max_steps: int = 300, tol: float = 0.05) -> None:
        """Unconstrained initial distillation of the coupled policy."""
        cfg = self.cfg
        for _ in range(max_steps):
            batch = self.buffer.sample(self.rng, cfg.batch_size)
            s, masks = batch["s"], batch["mask"]
            n_a = max(2, cfg.recouple_samples // 2)
            s_rep = np.repeat(s, n_a, axis=0)
            mask_rep = np.repeat(masks, n_a, axis=0)
            idx_prop, _, _ = self.discrete.sample_batch(
                self.discrete.policy, s_rep, mask_rep)
            pol = self.continuous._policy_sample_batch(
                self.continuous.actor, s_rep, rng=self.rng)
            weights = np.full(len(s_rep), 1.0 / len(s_rep))
            grads = self._distill_grads(s_rep, mask_rep, idx_prop, pol["a"],
                                        weights)
            self.opt_coupled.step(grads)
            if self._kl_product_to_coupled(s, masks) < tol:
                break
        self.coupled_ready = True

    def _distill_grads(self, s, masks, disc_idx, cont_a, weights):
        """Gradients of the weighted negative log-likelihood of proposals."""
        logits, mu, log_std, dls, tape, _ = self.coupled.heads(
            s, want_tape=True)
        n = s.shape[0]
        dout = np.zeros((n, self.total + 2 * self.cont_dim))
        for j, sl in enumerate(self.coupled.slices):
            if self.slots[j] == 1:
                continue
            logp = masked_log_softmax(logits[:, sl], masks[:, sl])
            p = np.where(masks[:, sl] > 0.5, np.exp(logp), 0.0)
            grad = p.copy()
            grad[np.arange(n), disc_idx[:, j]] -= 1.0
            dout[:, sl] = grad * weights[:, None]
        a = np.clip(cont_a, -1.0 + 1e-9, 1.0 - 1e-9)
        u = np.arctanh(a)
        sigma = np.exp(log_std)
        z = (u - mu) / sigma
        dmu = -(z / sigma) * weights[:, None]
        dlog_std = -(z * z - 1.0) * weights[:, None]
        off = self.total
        dout[:, off:off + self.cont_dim] = dmu
        dout[:, off + self.cont_dim:] = dlog_std * dls
        grads, _ = self.coupled.net.backward(tape, dout)
        return grads


def train_h_dsac(env, agent: HDsacAgent, total_steps: int,
                 warmup_steps: int = 200, update_every: int = 1,
                 episode_hook=None) -> list[dict]:
    """Drive a hybrid-action environment with one H-DSAC learner.

    Mirrors :func:`saginfl.dsac.train_dsac` step for step so that, with a
    degenerate discrete space, both loops produce identical trajectories.
    """
    logs: list[dict] = []
    obs = env.reset()
    masks = _env_masks(env, agent)
    ep_return, ep_len, ep_index = 0.0, 0, 0
    for step in range(total_steps):
        action = agent.act(obs, masks, explore=True)
        obs2, r, done, info = env.step(action)
        masks2 = _env_masks(env, agent)
        agent.observe(obs, action, r, obs2, done, masks, masks2)
        ep_return += r
        ep_len += 1
        obs, masks = obs2, masks2
        if step >= warmup_steps and step % update_every == 0:
            agent.update()
        if done:
            row = {"episode": ep_index, "steps": ep_len,
                   "episode_return": ep_return}
            if episode_hook is not None:
                row.update(episode_hook(env, info) or {})
            logs.append(row)
            obs = env.reset()
            masks = _env_masks(env, agent)
            ep_return, ep_len = 0.0, 0
            ep_index += 1
    return logs


def _env_masks(env, agent: HDsacAgent) -> np.ndarray:
    if hasattr(env, "action_masks"):
        parts = env.action_masks()
        return np.concatenate([np.asarray(p, dtype=np.float64)
                               for p in parts])
    return full_masks(agent.slots)
