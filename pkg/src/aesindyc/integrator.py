"""Scalar integrator ``x' = x + u`` with quadratic cost; a PPO sanity task."""

import numpy as np


class IntegratorEnv:
    def __init__(self, horizon: int = 20, control_weight: float = 0.01, x0_scale: float = 1.0):
        self.horizon = horizon
        self.control_weight = control_weight
        self.x0_scale = x0_scale
        self.obs_dim = 1
        self.act_dim = 1
        self.x = None

    def initial_obs(self, n, rng):
        return rng.uniform(-self.x0_scale, self.x0_scale, size=(n, 1))

    def reset(self, n, rng):
        self.x = self.initial_obs(n, rng)
        return self.x.copy()

    def reward(self, next_obs, u):
        return -(next_obs[:, 0] ** 2 + self.control_weight * u[:, 0] ** 2)

    def step(self, u, rng):
        u = np.asarray(u, dtype=np.float64).reshape(-1, 1)
        self.x = self.x + u
        return self.x.copy(), self.reward(self.x, u)
