"""Tiny benchmark environments for agent smoke tests."""

import numpy as np


class ContinuousBandit:
    """One-step bandit: reward -(a - optimum)^2 for a scalar action.

    The reward is symmetric and quadratic around the optimum, so the
    soft-optimal policy is a Gaussian centered there for any temperature and
    the deterministic (mean) action should converge to ``optimum``.
    """

    obs_dim = 1
    cont_dim = 1

    def __init__(self, optimum: float = 0.3):
        self.optimum = optimum

    def reset(self):
        return np.zeros(1)

    def step(self, action):
        a = float(np.asarray(action).reshape(-1)[0])
        reward = -(a - self.optimum) ** 2
        return np.zeros(1), reward, True, {}


class HybridBandit:
    """One-step bandit over (2 discrete arms) x (1 continuous dim).

    Arm 0 peaks at 0.0 reward (a = +0.5); arm 1 peaks at ``peak`` (a =
    ``optimum``), so the jointly optimal action is (arm 1, optimum).
    """

    obs_dim = 1
    cont_dim = 1
    discrete_slots = [2]

    def __init__(self, optimum: float = -0.3, peak: float = 0.4):
        self.optimum = optimum
        self.peak = peak

    def reward_surface(self, arm: int, a: float) -> float:
        if arm == 0:
            return -(a - 0.5) ** 2
        return self.peak - 2.0 * (a - self.optimum) ** 2

    def reset(self):
        return np.zeros(1)

    def step(self, action):
        disc, cont = action
        arm = int(np.asarray(disc).reshape(-1)[0])
        a = float(np.asarray(cont).reshape(-1)[0])
        return np.zeros(1), self.reward_surface(arm, a), True, {}

    def action_masks(self):
        return [np.ones(2, dtype=bool)]


class DegenerateHybridBandit(ContinuousBandit):
    """ContinuousBandit dressed as a hybrid env with one-option slots."""

    discrete_slots = [1, 1]

    def step(self, action):
        if isinstance(action, tuple):
            _, cont = action
        else:
            cont = action
        return super().step(cont)

    def action_masks(self):
        return [np.ones(1, dtype=bool), np.ones(1, dtype=bool)]
