"""Clipped-surrogate PPO with a diagonal Gaussian policy and a value critic.

Environments used here expose a small batched interface::

    env.obs_dim, env.act_dim, env.horizon
    env.reset(n, rng) -> obs (n, obs_dim)
    env.step(u, rng)  -> (obs (n, obs_dim), reward (n,))

All episodes in a batch run for exactly ``env.horizon`` steps; the final step
is treated as terminal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ndiff
from .errors import CheckpointError, ConfigError, NumericError, ShapeError
from .ndiff import MlpParams, OptimState, mlp_forward, mlp_init

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class PolicyParams:
    actor: MlpParams  # obs -> hidden -> act_dim means
    critic: MlpParams  # obs -> hidden -> 1
    log_std: np.ndarray  # state-independent, one per action dim
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    sgd_batch: int = 256
    grad_clip: float = 0.5
    update_epochs: int = 10
    vf_coef: float = 0.5
    opt: OptimState | None = None

    @property
    def obs_dim(self) -> int:
        return self.actor.layer_sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor.layer_sizes[-1]

    def blocks(self) -> ndiff.Blocks:
        out = self.actor.blocks("actor")
        out.update(self.critic.blocks("critic"))
        out["log_std"] = self.log_std
        return out

    def with_blocks(self, blocks) -> "PolicyParams":
        return replace(
            self,
            actor=self.actor.with_blocks(blocks, "actor"),
            critic=self.critic.with_blocks(blocks, "critic"),
            log_std=blocks["log_std"],
        )

    def hyper(self) -> dict:
        return {
            k: getattr(self, k)
            for k in ("clip_eps", "gamma", "gae_lambda", "lr", "sgd_batch", "grad_clip", "update_epochs", "vf_coef")
        }


def init_policy(obs_dim: int, act_dim: int, hidden: int = 128, seed=0, log_std_init: float = 0.0, **hyper) -> PolicyParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    actor = mlp_init([obs_dim, hidden, act_dim], "tanh", rng)
    actor.weights[-1] *= 0.01  # start with near-zero mean actions
    critic = mlp_init([obs_dim, hidden, 1], "tanh", rng)
    p = PolicyParams(actor, critic, np.full(act_dim, float(log_std_init)), **hyper)
    if p.clip_eps < 0 or not 0 < p.gamma <= 1 or not 0 <= p.gae_lambda <= 1:
        raise ConfigError("need clip_eps >= 0, gamma in (0, 1], gae_lambda in [0, 1]")
    p.log_std = np.clip(p.log_std, LOG_STD_MIN, LOG_STD_MAX)
    return p


# ---------------------------------------------------------------------------
# policy evaluation
# ---------------------------------------------------------------------------


def policy_mean(p: PolicyParams, obs):
    return mlp_forward(p.actor, obs)


def value(p: PolicyParams, obs) -> np.ndarray:
    return np.asarray(mlp_forward(p.critic, obs))[..., 0]


def _log_prob(mean, log_std, actions):
    """Diagonal Gaussian log-density; tape-aware."""
    z = ndiff.mul(ndiff.add(actions, ndiff.neg(mean)), ndiff.exp(ndiff.neg(log_std)))
    k = np.shape(ndiff._val(log_std))[-1]
    quad = ndiff.mul(-0.5, ndiff.tsum(ndiff.mul(z, z), axis=-1))
    return ndiff.add(quad, ndiff.add(ndiff.neg(ndiff.tsum(log_std)), -k * _HALF_LOG_2PI))


def log_prob(p: PolicyParams, obs, actions) -> np.ndarray:
    log_std = np.clip(p.log_std, LOG_STD_MIN, LOG_STD_MAX)
    return _log_prob(policy_mean(p, obs), log_std, np.asarray(actions, dtype=np.float64))


def policy_sample(p: PolicyParams, obs, rng):
    """Draw ``a ~ N(mean(obs), diag(exp(2 log_std)))``; returns ``(action, log_prob)``."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != p.obs_dim:
        raise ShapeError(f"observation has {obs.shape[-1]} entries, policy expects {p.obs_dim}")
    mean = policy_mean(p, obs)
    log_std = np.clip(p.log_std, LOG_STD_MIN, LOG_STD_MAX)
    action = mean + np.exp(log_std) * rng.standard_normal(np.shape(mean))
    return action, _log_prob(mean, log_std, action)


def as_policy_fn(p: PolicyParams, deterministic: bool = False):
    """Adapter to the ``policy(obs, rng) -> action`` convention used by rollouts."""

    def fn(obs, rng):
        if deterministic:
            return policy_mean(p, obs)
        return policy_sample(p, obs, rng)[0]

    return fn


# ---------------------------------------------------------------------------
# advantages
# ---------------------------------------------------------------------------


def gae(rewards, values, bootstrap_value, gamma: float, lam: float, dones=None):
    """Generalized advantage estimation along axis 0.

    ``rewards``/``values`` are ``(T,)`` or ``(T, n)``; ``bootstrap_value`` is the
    value estimate after the last step (ignored where ``dones[-1]`` is set).
    ``dones[t]`` marks an episode ending after step ``t``.
    Returns ``(advantages, returns)`` with ``returns = advantages + values``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape:
        raise ShapeError(f"rewards {r.shape} and values {v.shape} differ")
    d = np.zeros_like(r) if dones is None else np.asarray(dones, dtype=np.float64)
    T = r.shape[0]
    adv = np.zeros_like(r)
    last = np.zeros_like(r[0])
    next_v = np.asarray(bootstrap_value, dtype=np.float64) * np.ones_like(r[0])
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * next_v * nonterminal - v[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
        next_v = v[t]
    return adv, adv + v


def normalize(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 1e-12 else 1.0)


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


@dataclass
class RolloutBatch:
    """Flattened episode-major transitions with advantage bookkeeping."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    next_observations: np.ndarray
    advantages: np.ndarray = None
    returns: np.ndarray = None
    episode_returns: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.rewards)


def collect_rollouts(env, p: PolicyParams, n_episodes: int, rng, horizon: int | None = None) -> RolloutBatch:
    """Run ``n_episodes`` parallel episodes and fill in GAE advantages/returns."""
    T = env.horizon if horizon is None else horizon
    obs = env.reset(n_episodes, rng)
    O, A, LP, R, V, ON = [], [], [], [], [], []
    for _ in range(T):
        a, lp = policy_sample(p, obs, rng)
        next_obs, r = env.step(a, rng)
        O.append(obs), A.append(a), LP.append(lp), R.append(r), V.append(value(p, obs)), ON.append(next_obs)
        obs = next_obs
    R, V = np.array(R), np.array(V)  # (T, n)
    dones = np.zeros_like(R)
    dones[-1] = 1.0
    adv, ret = gae(R, V, 0.0, p.gamma, p.gae_lambda, dones)

    def flat(x):
        x = np.asarray(x)
        x = np.swapaxes(x, 0, 1)  # episode-major
        return x.reshape((-1,) + x.shape[2:])

    return RolloutBatch(
        observations=flat(O),
        actions=flat(A),
        log_probs=flat(LP),
        rewards=flat(R),
        values=flat(V),
        dones=flat(dones),
        next_observations=flat(ON),
        advantages=flat(adv),
        returns=flat(ret),
        episode_returns=R.sum(axis=0),
    )


# ---------------------------------------------------------------------------
# update
# ---------------------------------------------------------------------------


def _ppo_loss(p: PolicyParams, obs, actions, old_logp, adv, ret):
    log_std = ndiff.clip(p.log_std, LOG_STD_MIN, LOG_STD_MAX)
    logp = _log_prob(mlp_forward(p.actor, obs), log_std, actions)
    ratio = ndiff.exp(ndiff.add(logp, -old_logp))
    clipped = ndiff.clip(ratio, 1.0 - p.clip_eps, 1.0 + p.clip_eps)
    surr = ndiff.minimum(ndiff.mul(ratio, adv), ndiff.mul(clipped, adv))
    v_err = ndiff.add(ndiff.tsum(mlp_forward(p.critic, obs), axis=1), -ret)
    return ndiff.add(ndiff.neg(ndiff.tmean(surr)), ndiff.mul(p.vf_coef, ndiff.tmean(ndiff.mul(v_err, v_err))))


def clipped_objective(p: PolicyParams, batch: RolloutBatch, advantages=None) -> np.ndarray:
    """Per-sample ``min(rho A, clip(rho, 1 +- eps) A)``."""
    adv = batch.advantages if advantages is None else advantages
    rho = np.exp(log_prob(p, batch.observations, batch.actions) - batch.log_probs)
    return np.minimum(rho * adv, np.clip(rho, 1 - p.clip_eps, 1 + p.clip_eps) * adv)


def ppo_update(p: PolicyParams, batch: RolloutBatch, epochs: int | None = None, rng=None) -> PolicyParams:
    """Several epochs of minibatch Adam on the clipped objective plus value loss.

    On a non-finite loss the update is abandoned and ``p`` returned unchanged.
    """
    epochs = p.update_epochs if epochs is None else epochs
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(batch)
    if n == 0 or epochs <= 0:
        return p
    adv = normalize(batch.advantages)
    blocks = {k: np.array(v, dtype=np.float64) for k, v in p.blocks().items()}
    opt = p.opt.copy() if p.opt is not None else OptimState.fresh(blocks, lr=p.lr)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, p.sgd_batch):
            idx = order[lo : lo + p.sgd_batch]
            args = (batch.observations[idx], batch.actions[idx], batch.log_probs[idx], adv[idx], batch.returns[idx])
            try:
                _, grads = ndiff.grad(lambda b: _ppo_loss(p.with_blocks(b), *args), blocks)
            except NumericError:
                return p
            grads = ndiff.clip_grad_norm(grads, p.grad_clip)
            blocks, opt = ndiff.optim_step(blocks, grads, opt)
            blocks["log_std"] = np.clip(blocks["log_std"], LOG_STD_MIN, LOG_STD_MAX)
    if not all(np.all(np.isfinite(v)) for v in blocks.values()):
        return p
    out = p.with_blocks(blocks)
    out.opt = opt
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

POLICY_FORMAT = "aesindyc-policy"


def policy_to_dict(p: PolicyParams) -> dict:
    """Networks and hyperparameters; optimizer moments are not stored."""
    return {
        "format": POLICY_FORMAT,
        "version": 1,
        "actor": ndiff.mlp_to_dict(p.actor),
        "critic": ndiff.mlp_to_dict(p.critic),
        "log_std": np.asarray(p.log_std).tolist(),
        "hyper": p.hyper(),
    }


def policy_from_dict(doc: dict) -> PolicyParams:
    try:
        if doc.get("format") != POLICY_FORMAT:
            raise CheckpointError(f"not a policy checkpoint (format={doc.get('format')!r})")
        return PolicyParams(
            ndiff.mlp_from_dict(doc["actor"]),
            ndiff.mlp_from_dict(doc["critic"]),
            np.array(doc["log_std"], dtype=np.float64),
            **doc["hyper"],
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed policy checkpoint: {exc}") from exc


def save_policy(p: PolicyParams, path) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(p)))


def load_policy(path) -> PolicyParams:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError(f"malformed policy checkpoint {path}")
    return policy_from_dict(doc)
