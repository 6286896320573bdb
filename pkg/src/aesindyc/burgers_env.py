"""Viscous Burgers' equation on a periodic 1D grid with distributed actuation.

    x_t + (x^2/2)_x - nu x_xx = u(x, t)

Each control interval ``dt_control`` is advanced with ``dt_control/dt_solver``
Lie-split substeps: explicit conservative central advection plus forcing,
followed by Crank-Nicolson diffusion (periodic tridiagonal solve).  Process
noise is injected once per control interval.

Two API levels live here: functional helpers that act on a single
:class:`FieldState`, and :class:`BurgersEnv`, a batched stateful environment
used by the RL code.  Both share the same solver.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeError
from .tridiag import solve_cyclic_tridiagonal


@dataclass(frozen=True)
class BurgersConfig:
    """Environment parameters.  Defaults follow the partially observable setup."""

    L: float = 1.0
    Nx: int = 256
    nu: float = 1.0
    dt_solver: float = 1e-4
    dt_control: float = 0.01
    Nu: int = 8
    support_width: float = 0.125
    Nobs: int = 48
    sigma_process: float = 0.25
    sigma_obs: float = 0.25
    Qw: float = 100.0
    Rw: float = 0.01
    x_ref: Optional[tuple] = None  # None -> zero vector
    u_ref: Optional[tuple] = None
    horizon_s: float = 1.0  # training / evaluation window
    extrap_s: float = 4.0  # extra time for the extrapolation window
    advection: bool = True  # test hook: False leaves pure diffusion

    def __post_init__(self):
        if self.Nx < 4:
            raise ConfigError(f"Nx must be >= 4, got {self.Nx}")
        if not self.nu > 0 or not self.L > 0:
            raise ConfigError("nu and L must be positive")
        if not (self.dt_solver > 0 and self.dt_control > 0):
            raise ConfigError("time steps must be positive")
        ratio = self.dt_control / self.dt_solver
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ConfigError(f"dt_control={self.dt_control} is not an integer multiple of dt_solver={self.dt_solver}")
        if self.Nu < 1 or self.Nu * self.support_width > 1.0 + 1e-12 or self.support_width <= 0:
            raise ConfigError(f"Nu * support_width must lie in (0, 1], got {self.Nu} * {self.support_width}")
        if not 1 <= self.Nobs <= self.Nx:
            raise ConfigError(f"Nobs must lie in [1, Nx={self.Nx}], got {self.Nobs}")
        if self.sigma_process < 0 or self.sigma_obs < 0:
            raise ConfigError("noise levels must be non-negative")
        for name, n in (("x_ref", self.Nx), ("u_ref", self.Nu)):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ConfigError(f"{name} must have length {n}, got {len(v)}")

    @property
    def substeps(self) -> int:
        return int(round(self.dt_control / self.dt_solver))

    @property
    def dx(self) -> float:
        return self.L / self.Nx

    @property
    def horizon_steps(self) -> int:
        return int(round(self.horizon_s / self.dt_control))

    @property
    def extrap_steps(self) -> int:
        return int(round(self.extrap_s / self.dt_control))

    @property
    def partially_observed(self) -> bool:
        return self.Nobs < self.Nx

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.Nx) * self.dx

    def x_ref_vec(self) -> np.ndarray:
        return np.zeros(self.Nx) if self.x_ref is None else np.asarray(self.x_ref, dtype=np.float64)

    def u_ref_vec(self) -> np.ndarray:
        return np.zeros(self.Nu) if self.u_ref is None else np.asarray(self.u_ref, dtype=np.float64)

    def replace(self, **changes) -> "BurgersConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class FieldState:
    values: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class SensorMatrix:
    """0/1 selection matrix with one 1 per row, stored as column indices."""

    indices: tuple
    Nx: int

    @property
    def Nobs(self) -> int:
        return len(self.indices)

    def dense(self) -> np.ndarray:
        C = np.zeros((self.Nobs, self.Nx))
        C[np.arange(self.Nobs), list(self.indices)] = 1.0
        return C

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[..., list(self.indices)]


class Transition(NamedTuple):
    obs: np.ndarray
    u: np.ndarray
    next_obs: np.ndarray
    reward: float


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def make_sensor_matrix(Nx: int, Nobs: int) -> SensorMatrix:
    """Evenly spaced sensors at ``floor(j * Nx / Nobs)``."""
    if not 1 <= Nobs <= Nx:
        raise ConfigError(f"need 1 <= Nobs <= Nx, got Nobs={Nobs}, Nx={Nx}")
    return SensorMatrix(tuple((j * Nx) // Nobs for j in range(Nobs)), Nx)


@functools.lru_cache(maxsize=64)
def _actuation_matrix(L, Nx, Nu, support_width):
    B = np.zeros((Nx, Nu))
    width = support_width * L
    for j in range(Nu):
        center = (j + 0.5) * L / Nu
        lo = (center - 0.5 * width) * Nx / L
        hi = (center + 0.5 * width) * Nx / L
        first = math.ceil(lo - 1e-9)
        last = math.ceil(hi - 1e-9)  # exclusive
        B[np.arange(first, last) % Nx, j] = 1.0
    B.flags.writeable = False
    return B


def actuation_matrix(cfg: BurgersConfig) -> np.ndarray:
    """``(Nx, Nu)`` indicator matrix of the actuator supports."""
    return _actuation_matrix(cfg.L, cfg.Nx, cfg.Nu, cfg.support_width)


def actuation_field(u, cfg: BurgersConfig) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != cfg.Nu:
        raise ShapeError(f"control has {u.shape[-1]} entries, config has Nu={cfg.Nu}")
    return u @ actuation_matrix(cfg).T


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=32)
def _diffusion_propagator(Nx, dx, nu, dt):
    """Crank-Nicolson step matrix ``(I - r/2 D2)^-1 (I + r/2 D2)``."""
    r = nu * dt / dx**2
    D2 = -2.0 * np.eye(Nx) + np.eye(Nx, k=1) + np.eye(Nx, k=-1)
    D2[0, -1] = D2[-1, 0] = 1.0
    explicit = np.eye(Nx) + 0.5 * r * D2
    off = np.full(Nx, -0.5 * r)
    P = solve_cyclic_tridiagonal(off, np.full(Nx, 1.0 + r), off, explicit)
    P.flags.writeable = False
    return P


def diffusion_propagator(cfg: BurgersConfig, nu: Optional[float] = None) -> np.ndarray:
    return _diffusion_propagator(cfg.Nx, cfg.dx, cfg.nu if nu is None else nu, cfg.dt_solver)


def _substep(x, forcing, P, dt, dx, advection):
    if advection:
        flux = 0.5 * x * x
        x = x - (dt / (2.0 * dx)) * (np.roll(flux, -1, axis=-1) - np.roll(flux, 1, axis=-1)) + dt * forcing
    else:
        x = x + dt * forcing
    return x @ P.T


def advance(values, u, cfg: BurgersConfig, rng=None, step_index=None):
    """Advance one control interval.  ``values`` may be ``(Nx,)`` or ``(n, Nx)``."""
    x = np.asarray(values, dtype=np.float64)
    forcing = actuation_field(u, cfg)
    P = diffusion_propagator(cfg)
    dt, dx = cfg.dt_solver, cfg.dx
    x0 = x
    for _ in range(cfg.substeps):
        x = _substep(x, forcing, P, dt, dx, cfg.advection)
    if not np.all(np.isfinite(x)):
        # replay to find where it blew up
        y = x0
        for k in range(cfg.substeps):
            with np.errstate(all="ignore"):
                y = _substep(y, forcing, P, dt, dx, cfg.advection)
            if not np.all(np.isfinite(y)):
                raise DivergenceError(f"non-finite state at substep {k}", substep=k, step=step_index)
        raise DivergenceError("non-finite state", step=step_index)
    if cfg.sigma_process > 0 and rng is not None:
        x = x + rng.normal(0.0, cfg.sigma_process * math.sqrt(cfg.dt_control), size=x.shape)
    return x


def step(s: FieldState, u, cfg: BurgersConfig, rng=None) -> FieldState:
    """Advance ``s`` by one control interval holding ``u`` constant."""
    if not np.all(np.isfinite(s.values)) or not np.all(np.isfinite(u)):
        raise DivergenceError("non-finite input state or control")
    return FieldState(advance(s.values, u, cfg, rng), s.t + cfg.dt_control)


def observe(s, C: SensorMatrix, cfg: BurgersConfig, rng=None) -> np.ndarray:
    """Sensor readings plus i.i.d. N(0, sigma_obs^2) noise."""
    values = s.values if isinstance(s, FieldState) else np.asarray(s)
    obs = C.apply(values).astype(np.float64)
    if cfg.sigma_obs > 0 and rng is not None:
        obs = obs + rng.normal(0.0, cfg.sigma_obs, size=obs.shape)
    return obs


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------


def _quadratic_cost(err, u, q, cfg):
    du = u - cfg.u_ref_vec()
    return q * np.sum(err * err, axis=-1) + cfg.Rw * np.sum(du * du, axis=-1)


def _check_reward_shapes(obs, u, cfg):
    if obs.shape[-1] != cfg.Nobs:
        raise ShapeError(f"observation has {obs.shape[-1]} entries, expected Nobs={cfg.Nobs}")
    if u.shape[-1] != cfg.Nu:
        raise ShapeError(f"control has {u.shape[-1]} entries, expected Nu={cfg.Nu}")


def reward(obs, u, cfg: BurgersConfig, C: Optional[SensorMatrix] = None):
    """Single-step tracking reward with ``Q = Qw I`` in observation space."""
    obs = np.asarray(obs, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_reward_shapes(obs, u, cfg)
    C = C or make_sensor_matrix(cfg.Nx, cfg.Nobs)
    err = obs - C.apply(cfg.x_ref_vec())
    return -_quadratic_cost(err, u, cfg.Qw, cfg)


def projected_reward(obs, u, cfg: BurgersConfig, C: Optional[SensorMatrix] = None):
    """Reward with the target projected to the sensors and ``Q = Qw * Nx/Nobs * I``."""
    if not cfg.partially_observed:
        raise ConfigError("projected reward needs Nobs < Nx")
    obs = np.asarray(obs, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_reward_shapes(obs, u, cfg)
    C = C or make_sensor_matrix(cfg.Nx, cfg.Nobs)
    err = obs - C.apply(cfg.x_ref_vec())
    return -_quadratic_cost(err, u, cfg.Qw * cfg.Nx / cfg.Nobs, cfg)


def training_reward(obs, u, cfg: BurgersConfig, C: Optional[SensorMatrix] = None):
    """Projected reward under partial observation, plain reward otherwise."""
    if cfg.partially_observed:
        return projected_reward(obs, u, cfg, C)
    return reward(obs, u, cfg, C)


def full_order_reward(values, u, cfg: BurgersConfig):
    """Closed-form reward on the noise-free full state (used for evaluation)."""
    values = np.asarray(values, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return -_quadratic_cost(values - cfg.x_ref_vec(), u, cfg.Qw, cfg)


# ---------------------------------------------------------------------------
# initial conditions
# ---------------------------------------------------------------------------


def sample_initial_uniform(cfg: BurgersConfig, rng, n: Optional[int] = None) -> FieldState:
    shape = (cfg.Nx,) if n is None else (n, cfg.Nx)
    return FieldState(rng.uniform(-1.0, 1.0, size=shape), 0.0)


def bell_profile(cfg: BurgersConfig, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    delta = np.arange(cfg.Nx) / cfg.Nx
    return 5.0 / np.cosh(10.0 * (delta - alpha[..., None]))


def sample_initial_bell(cfg: BurgersConfig, alpha=None, rng=None) -> FieldState:
    """Bell-shaped state ``5 / cosh(10 (i/Nx - alpha))``.

    With ``alpha=None`` the peak location is drawn from U[0.25, 0.75].
    """
    if alpha is None:
        if rng is None:
            raise ConfigError("need alpha or rng")
        alpha = rng.uniform(0.25, 0.75)
    return FieldState(bell_profile(cfg, alpha), 0.0)


# ---------------------------------------------------------------------------
# batched environment
# ---------------------------------------------------------------------------


INITIAL_CONDITIONS = ("uniform", "bell", "zero")


class BurgersEnv:
    """Batched episodic environment; holds ``n`` independent fields.

    ``reset`` and ``step`` return observations; ``step`` also returns the
    training reward evaluated on the next observation and the applied control.
    """

    def __init__(self, cfg: BurgersConfig, init: str = "uniform", bell_alpha=None):
        if init not in INITIAL_CONDITIONS:
            raise ConfigError(f"unknown initial condition {init!r}")
        self.cfg = cfg
        self.init = init
        self.bell_alpha = bell_alpha
        self.sensors = make_sensor_matrix(cfg.Nx, cfg.Nobs)
        self.values = None
        self.t = 0.0
        self.steps_taken = 0

    @property
    def obs_dim(self) -> int:
        return self.cfg.Nobs

    @property
    def act_dim(self) -> int:
        return self.cfg.Nu

    @property
    def horizon(self) -> int:
        return self.cfg.horizon_steps

    def initial_values(self, n: int, rng) -> np.ndarray:
        if self.init == "zero":
            return np.zeros((n, self.cfg.Nx))
        if self.init == "uniform":
            return sample_initial_uniform(self.cfg, rng, n).values
        alpha = self.bell_alpha
        if alpha is None:
            alpha = rng.uniform(0.25, 0.75, size=n)
        return bell_profile(self.cfg, np.broadcast_to(alpha, (n,)))

    def initial_obs(self, n: int, rng) -> np.ndarray:
        """Observation of a fresh initial state (no simulation involved)."""
        return observe(self.initial_values(n, rng), self.sensors, self.cfg, rng)

    def reward(self, next_obs, u):
        return training_reward(next_obs, u, self.cfg, self.sensors)

    def reset(self, n: int, rng) -> np.ndarray:
        self.values = self.initial_values(n, rng)
        self.t = 0.0
        self.steps_taken = 0
        return observe(self.values, self.sensors, self.cfg, rng)

    def step(self, u, rng):
        u = np.asarray(u, dtype=np.float64)
        self.values = advance(self.values, u, self.cfg, rng, step_index=self.steps_taken)
        self.t += self.cfg.dt_control
        self.steps_taken += 1
        obs = observe(self.values, self.sensors, self.cfg, rng)
        return obs, self.reward(obs, u)


PolicyFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def rollout_episode(policy: PolicyFn, cfg: BurgersConfig, horizon_steps: int, rng, init: str = "uniform"):
    """Run one episode and return its transitions ``(obs, u, next_obs, reward)``."""
    if horizon_steps < 1:
        raise ConfigError(f"horizon_steps must be >= 1, got {horizon_steps}")
    env = BurgersEnv(cfg, init=init)
    obs = env.reset(1, rng)[0]
    out = []
    for _ in range(horizon_steps):
        u = np.asarray(policy(obs, rng), dtype=np.float64)
        next_obs, r = env.step(u[None, :], rng)
        out.append(Transition(obs, u, next_obs[0], float(r[0])))
        obs = next_obs[0]
    return out
