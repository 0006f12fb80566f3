"""Distributional soft actor-critic with a Gaussian return model.

The critic outputs the mean and standard deviation of the soft return; the
return target is a single draw from the target critic's Gaussian shifted by
the entropy-regularized Bellman backup, clipped into a band around the
current estimate.  Actions are tanh-squashed reparameterized Gaussians.
All gradients are computed in closed form against the dense-net engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .nn import Adam, DenseNet, soft_update

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianReturn:
    """Mean and spread of the soft state-action return distribution."""

    q_mean: float
    q_std: float

    def __post_init__(self) -> None:
        if self.q_std < 0.0:
            raise ValueError("q_std must be non-negative")


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


# ---------------------------------------------------------------------------
# closed-form kernels (unit-tested against finite differences)
# ---------------------------------------------------------------------------

def gaussian_loglik_grads(target: np.ndarray, q: np.ndarray,
                          rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the Gaussian log-likelihood of ``target`` under N(q, rho).

    ``d/dq = (target - q) / rho^2`` and
    ``d/drho = (target - q)^2 / rho^3 - 1 / rho``.
    """
    target = np.asarray(target, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    diff = target - q
    return diff / rho ** 2, diff ** 2 / rho ** 3 - 1.0 / rho


def clamp_std(rho_raw, rho_min: float = 1.0):
    """Floor the return spread to keep the 1/rho^3 terms bounded."""
    return np.maximum(rho_raw, rho_min)


def clip_target(target, q_current, clip_factor: float):
    """Clip the sampled return target into ``[q - clip, q + clip]``."""
    if clip_factor <= 0.0:
        raise ValueError("clip_factor must be positive")
    return np.clip(target, q_current - clip_factor, q_current + clip_factor)


def soft_return_target(reward, done, theta_next, logp_next, temperature,
                       discount):
    """Entropy-regularized distributional Bellman backup.

    ``r + discount (theta' - nu log pi(a'|s'))`` with a terminal mask; for
    terminal transitions the target equals the reward exactly.
    """
    cont = 1.0 - np.asarray(done, dtype=np.float64)
    return reward + discount * cont * (theta_next - temperature * logp_next)


def _bounded_log_std(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map raw output to log-std in [LOG_STD_MIN, LOG_STD_MAX], smoothly.

    Returns (log_std, d log_std / d raw); the tanh bounding keeps gradient
    checks exact everywhere, unlike a hard clamp.
    """
    t = np.tanh(raw)
    half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN)
    log_std = LOG_STD_MIN + half * (t + 1.0)
    return log_std, half * (1.0 - t * t)


class SquashedGaussianHead:
    """Shared sampling/backprop logic for tanh-Gaussian policies."""

    @staticmethod
    def split(out: np.ndarray, act_dim: int):
        mu = out[..., :act_dim]
        raw = out[..., act_dim:2 * act_dim]
        log_std, dlog_std_draw = _bounded_log_std(raw)
        return mu, log_std, dlog_std_draw

    @staticmethod
    def sample(mu: np.ndarray, log_std: np.ndarray,
               eps: np.ndarray):
        sigma = np.exp(log_std)
        u = mu + sigma * eps
        a = np.tanh(u)
        logp = (-0.5 * eps ** 2 - log_std - 0.5 * LOG_2PI
                - np.log(1.0 - a ** 2 + SQUASH_EPS)).sum(axis=-1)
        return a, logp, sigma, u

    @staticmethod
    def logp_of_action(mu: np.ndarray, log_std: np.ndarray,
                       a: np.ndarray) -> np.ndarray:
        a = np.clip(a, -1.0 + 1e-9, 1.0 - 1e-9)
        u = np.arctanh(a)
        sigma = np.exp(log_std)
        z = (u - mu) / sigma
        return (-0.5 * z ** 2 - log_std - 0.5 * LOG_2PI
                - np.log(1.0 - a ** 2 + SQUASH_EPS)).sum(axis=-1)


# ---------------------------------------------------------------------------
# replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity ring buffer over named numpy fields."""

    def __init__(self, capacity: int, fields: dict[str, tuple]):
        """``fields`` maps name -> (shape tuple, dtype)."""
        self.capacity = capacity
        self._data = {name: np.zeros((capacity, *shape), dtype=dtype)
                      for name, (shape, dtype) in fields.items()}
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def append(self, **values) -> None:
        i = self._next
        for name, value in values.items():
            self._data[name][i] = value
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int) -> dict:
        if self._size == 0:
            raise ValueError("buffer is empty")
        idx = rng.integers(0, self._size, size=batch)
        return {name: arr[idx] for name, arr in self._data.items()}

    def get(self, index: int) -> dict:
        if not 0 <= index < self._size:
            raise IndexError(index)
        return {name: arr[index] for name, arr in self._data.items()}


# ---------------------------------------------------------------------------
# the agent
# ---------------------------------------------------------------------------

class DsacAgent:
    """Continuous-action distributional SAC over tanh-bounded actions."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: TrainConfig,
                 seed: int = 0):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        h = list(cfg.hidden)
        self.actor = DenseNet([obs_dim, *h, 2 * act_dim], rng=self.rng)
        self.critic = DenseNet([obs_dim + act_dim, *h, 2], rng=self.rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.opt_actor = Adam(self.actor, lr=cfg.lr_actor,
                              grad_clip=cfg.grad_clip)
        self.opt_critic = Adam(self.critic, lr=cfg.lr_critic,
                               grad_clip=cfg.grad_clip)
        self.log_temp = math.log(cfg.init_temperature)
        scale = getattr(cfg, "continuous_entropy_scale", 1.0)
        self.target_entropy = -scale * float(act_dim)
        self.buffer = ReplayBuffer(cfg.buffer_size, {
            "s": ((obs_dim,), np.float64),
            "a": ((act_dim,), np.float64),
            "r": ((), np.float64),
            "s2": ((obs_dim,), np.float64),
            "done": ((), np.float64),
        })
        self.step_count = 0

    # ---- acting ---------------------------------------------------------
    @property
    def temperature(self) -> float:
        return math.exp(self.log_temp)

    def act(self, obs: np.ndarray, explore: bool = True) -> np.ndarray:
        out = self.actor.forward(obs)
        mu, log_std, _ = SquashedGaussianHead.split(out, self.act_dim)
        if not explore:
            return np.tanh(mu)
        eps = self.rng.standard_normal(self.act_dim)
        a, _, _, _ = SquashedGaussianHead.sample(mu, log_std, eps)
        return a

    def observe(self, s, a, r, s2, done) -> None:
        self.buffer.append(s=s, a=a, r=r, s2=s2, done=float(done))

    # ---- learning ---------------------------------------------------------
    def _policy_sample_batch(self, net: DenseNet, s: np.ndarray,
                             want_tape: bool = False,
                             rng: np.random.Generator | None = None):
        if want_tape:
            out, tape = net.forward(s, want_tape=True)
        else:
            out, tape = net.forward(s), None
        mu, log_std, dls = SquashedGaussianHead.split(out, self.act_dim)
        eps = (rng or self.rng).standard_normal(mu.shape)
        a, logp, sigma, u = SquashedGaussianHead.sample(mu, log_std, eps)
        return dict(a=a, logp=logp, mu=mu, log_std=log_std, sigma=sigma,
                    eps=eps, u=u, dlog_std_draw=dls, tape=tape)

    def _critic_heads(self, net: DenseNet, s: np.ndarray, a: np.ndarray,
                      want_tape: bool = False):
        x = np.concatenate([s, a], axis=1)
        if want_tape:
            out, tape = net.forward(x, want_tape=True)
        else:
            out, tape = net.forward(x), None
        q = out[:, 0]
        rho_raw = out[:, 1]
        rho = clamp_std(rho_raw, self.cfg.rho_min)
        return q, rho, rho_raw, tape

    def critic_update(self, batch: dict) -> dict:
        cfg = self.cfg
        s, a, r = batch["s"], batch["a"], batch["r"]
        s2, done = batch["s2"], batch["done"]
        n = len(r)

        nxt = self._policy_sample_batch(self.actor_target, s2)
        q2, rho2, _, _ = self._critic_heads(self.critic_target, s2, nxt["a"])
        if getattr(cfg, "analytic_target", False):
            cont = 1.0 - done
            m = soft_return_target(r, done, q2, nxt["logp"],
                                   self.temperature, cfg.discount)
            rho_t = cfg.discount * cont * rho2
        else:
            theta2 = q2 + rho2 * self.rng.standard_normal(n)
            m = soft_return_target(r, done, theta2, nxt["logp"],
                                   self.temperature, cfg.discount)
            rho_t = None

        q, rho, rho_raw, tape = self._critic_heads(self.critic, s, a,
                                                   want_tape=True)
        y = clip_target(m, q, cfg.clip_factor)
        dq_ll, drho_ll = gaussian_loglik_grads(y, q, rho)
        if rho_t is not None:
            # analytic-KL mode: add the target-variance term to the rho pull
            drho_ll = drho_ll + rho_t ** 2 / rho ** 3
        # descend the negative log-likelihood
        dL_dq = -dq_ll / n
        dL_drho = -drho_ll / n
        dL_drho_raw = dL_drho * (rho_raw > cfg.rho_min)
        dy = np.stack([dL_dq, dL_drho_raw], axis=1)
        grads, _ = self.critic.backward(tape, dy)
        self.opt_critic.step(grads)
        return {"critic_target_mean": float(np.mean(y)),
                "rho_mean": float(np.mean(rho))}

    def actor_loss_grads(self, s: np.ndarray, eps: np.ndarray):
        """Gradients of the sampled soft objective E[nu log pi - Q].

        ``eps`` fixes the reparameterization noise so the objective is a
        deterministic function of the actor parameters (common random
        numbers); gradients flow through the critic mean only.
        """
        n = len(s)
        out, tape = self.actor.forward(s, want_tape=True)
        mu, log_std, dls = SquashedGaussianHead.split(out, self.act_dim)
        a, logp, sigma, _ = SquashedGaussianHead.sample(mu, log_std, eps)

        q, _, _, ctape = self._critic_heads(self.critic, s, a, want_tape=True)
        dy = np.zeros((n, 2))
        dy[:, 0] = 1.0
        _, dx = self.critic.backward(ctape, dy)
        dq_da = dx[:, self.obs_dim:]

        nu = self.temperature
        one_m_a2 = 1.0 - a ** 2
        # d(-log(1 - a^2 + eps))/du
        g_u = 2.0 * a * one_m_a2 / (one_m_a2 + SQUASH_EPS)
        dJ_dmu = (nu * g_u - dq_da * one_m_a2) / n
        dJ_dsigma = (nu * (-1.0 / sigma + g_u * eps)
                     - dq_da * one_m_a2 * eps) / n
        dJ_draw = dJ_dsigma * sigma * dls
        dout = np.concatenate([dJ_dmu, dJ_draw], axis=1)
        grads, _ = self.actor.backward(tape, dout)
        loss = float(np.mean(nu * logp - q))
        return grads, logp, q, loss

    def temperature_update(self, logp: np.ndarray) -> float:
        """Adjust nu toward the entropy target; log-parameterized so it
        stays positive.  Entropy below target raises nu."""
        nu = self.temperature
        err = float(np.mean(logp + self.target_entropy))
        self.log_temp += self.cfg.lr_temperature * nu * err
        self.log_temp = min(max(self.log_temp, -20.0), 5.0)
        return self.temperature

    def actor_update(self, batch: dict) -> dict:
        s = batch["s"]
        eps = self.rng.standard_normal((len(s), self.act_dim))
        grads, logp, q, _ = self.actor_loss_grads(s, eps)
        self.opt_actor.step(grads)
        nu = self.temperature_update(logp)
        return {"entropy": float(-np.mean(logp)), "temperature": nu,
                "q_mean": float(np.mean(q))}

    def update(self) -> dict:
        if len(self.buffer) == 0:
            return {}
        batch = self.buffer.sample(self.rng, self.cfg.batch_size)
        metrics = self.critic_update(batch)
        metrics.update(self.actor_update(batch))
        soft_update(self.critic_target, self.critic, self.cfg.tau)
        soft_update(self.actor_target, self.actor, self.cfg.tau)
        self.step_count += 1
        return metrics

    # ---- persistence ------------------------------------------------------
    def save(self, path: str | Path) -> None:
        blob = {"version": np.int64(1),
                "step_count": np.int64(self.step_count),
                "log_temp": np.float64(self.log_temp)}
        for tag, net in (("actor", self.actor), ("critic", self.critic),
                         ("actor_t", self.actor_target),
                         ("critic_t", self.critic_target)):
            for i, p in enumerate(net.get_params()):
                blob[f"{tag}_{i}"] = p
        np.savez(path, **blob)

    def load(self, path: str | Path) -> None:
        blob = np.load(path)
        if int(blob["version"]) != 1:
            raise ValueError("unsupported agent checkpoint version")
        self.step_count = int(blob["step_count"])
        self.log_temp = float(blob["log_temp"])
        for tag, net in (("actor", self.actor), ("critic", self.critic),
                         ("actor_t", self.actor_target),
                         ("critic_t", self.critic_target)):
            n = len(net.get_params())
            net.set_params([blob[f"{tag}_{i}"] for i in range(n)])


def train_dsac(env, agent: DsacAgent, total_steps: int,
               warmup_steps: int = 200, update_every: int = 1,
               episode_hook=None) -> list[dict]:
    """Drive a continuous-action environment with one DSAC learner.

    The policy acts (with exploration noise) from the very first step;
    updates start once the warmup has filled the buffer.  Returns one metric
    dict per finished episode.
    """
    logs: list[dict] = []
    obs = env.reset()
    ep_return, ep_len, ep_index = 0.0, 0, 0
    for step in range(total_steps):
        a = agent.act(obs, explore=True)
        obs2, r, done, info = env.step(a)
        agent.observe(obs, a, r, obs2, done)
        ep_return += r
        ep_len += 1
        obs = obs2
        if step >= warmup_steps and step % update_every == 0:
            agent.update()
        if done:
            row = {"episode": ep_index, "steps": ep_len,
                   "episode_return": ep_return}
            if episode_hook is not None:
                row.update(episode_hook(env, info) or {})
            logs.append(row)
            obs = env.reset()
            ep_return, ep_len = 0.0, 0
            ep_index += 1
    return logs
