"""Dyna-style training: PPO alternating between a fitted surrogate and the real environment.

One outer epoch is one PPO update.  Within every block of ``k_dyn`` epochs the
first ``k_dyn - 1`` updates use synthetic rollouts from the surrogate and the
last one collects ``N_collect`` real transitions, trains on them, stores them
and refits the surrogate.  ``k_dyn = 1`` is therefore plain model-free PPO; in
that case no off-policy data is gathered and no surrogate is built.

The FOM ledger counts real transitions and nothing else::

    fom(k_dyn > 1) = N_off + floor(epochs / k_dyn) * N_collect
    fom(k_dyn = 1) = epochs * N_collect
"""

from __future__ import annotations

import copy
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ppo
from . import surrogate as sur
from .burgers_env import Transition
from .errors import ConfigError
from .evaluation import evaluate_policy
from .ppo import PolicyParams, RolloutBatch


class FomLedger:
    """Counter of full-order environment transitions."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


class DataStore:
    """Two bounded FIFOs of transitions; the oldest entries are evicted first."""

    def __init__(self, off_capacity: int = 200, on_capacity: int = 2400):
        self.off_policy: deque = deque(maxlen=off_capacity)
        self.on_policy: deque = deque(maxlen=on_capacity)

    def add_off(self, transitions) -> None:
        self.off_policy.extend(transitions)

    def add_on(self, transitions) -> None:
        self.on_policy.extend(transitions)

    def __len__(self):
        return len(self.off_policy) + len(self.on_policy)

    def transitions(self) -> list:
        return list(self.off_policy) + list(self.on_policy)

    def arrays(self):
        """``(X, U, X_next)`` stacked in storage order."""
        items = self.transitions()
        if not items:
            raise ConfigError("datastore is empty")
        return (
            np.array([t.obs for t in items]),
            np.array([t.u for t in items]),
            np.array([t.next_obs for t in items]),
        )


@dataclass
class SurrogateSettings:
    n_state_latent: int = 2
    n_control_latent: int = 2
    hidden_state: int | None = None  # None: geometric mean of in/out sizes
    hidden_control: int | None = None
    activation: str = "softplus"
    deg_state: int = 3
    deg_control: int = 1
    lambda1: float = 1.0
    lambda2: float = 1.0
    epochs: int = 100
    batch: int = 64
    lr: float = 1e-3
    clip: float = 1.0
    split: float = 0.8


@dataclass
class DynaConfig:
    k_dyn: int = 5
    N_off: int = 200
    N_collect: int = 100
    total_epochs: int = 100
    surrogate_horizon: int | None = None  # None: real episode length
    n_batch: int | None = None  # synthetic transitions per surrogate update; None: N_collect
    off_capacity: int = 200
    on_capacity: int = 2400
    real_updates: bool = True  # also take a PPO step on each real batch when k_dyn > 1
    eval_seeds: tuple = (0, 1, 2, 3, 4)
    eval_every: int = 1
    surrogate: SurrogateSettings = field(default_factory=SurrogateSettings)

    def __post_init__(self):
        if int(self.k_dyn) != self.k_dyn or self.k_dyn < 1:
            raise ConfigError(f"k_dyn must be an integer >= 1, got {self.k_dyn}")
        for name in ("N_off", "N_collect", "total_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.k_dyn > 1 and self.N_off < 10:
            raise ConfigError("the surrogate needs N_off >= 10 transitions to fit")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")

    @property
    def batch_size(self) -> int:
        return self.N_collect if self.n_batch is None else self.n_batch


def fom_schedule(k_dyn: int, total_epochs: int, N_off: int, N_collect: int) -> list[int]:
    """Cumulative FOM interactions after each epoch, without simulating anything."""
    out, total = [], N_off if k_dyn > 1 else 0
    for e in range(total_epochs):
        if e % k_dyn == k_dyn - 1:
            total += N_collect
        out.append(total)
    return out


# ---------------------------------------------------------------------------
# data collection
# ---------------------------------------------------------------------------


def _act(policy, obs, rng):
    """Action and log-prob for PolicyParams or a plain ``policy(obs, rng)`` callable."""
    if isinstance(policy, PolicyParams):
        return ppo.policy_sample(policy, obs, rng)
    a = np.asarray(policy(obs, rng), dtype=np.float64)
    return a, np.zeros(len(a))


def _run_episode_block(env, policy, n_envs, steps, rng):
    obs = env.reset(n_envs, rng)
    cols = {k: [] for k in ("obs", "act", "logp", "rew", "next")}
    for _ in range(steps):
        a, lp = _act(policy, obs, rng)
        nxt, r = env.step(a, rng)
        cols["obs"].append(obs), cols["act"].append(a), cols["logp"].append(lp)
        cols["rew"].append(r), cols["next"].append(nxt)
        obs = nxt
    return {k: np.array(v) for k, v in cols.items()}  # (steps, n_envs, ...)


def _rollout(env, policy, n, rng, horizon=None):
    """``n`` transitions as whole episodes plus one truncated episode."""
    T = env.horizon if horizon is None else horizon
    blocks = []
    full, rest = divmod(n, T)
    if full:
        blocks.append((_run_episode_block(env, policy, full, T, rng), True))
    if rest:
        blocks.append((_run_episode_block(env, policy, 1, rest, rng), False))
    return blocks


def _transitions(blocks) -> list:
    out = []
    for cols, _ in blocks:
        steps, m = cols["rew"].shape
        for j in range(m):
            for t in range(steps):
                out.append(Transition(cols["obs"][t, j], cols["act"][t, j], cols["next"][t, j], float(cols["rew"][t, j])))
    return out


def collect_data(env, policy, n: int, rng, ledger: FomLedger | None = None) -> list:
    """Exactly ``n`` real transitions, episode-major; advances ``ledger`` by ``n``."""
    if n < 0:
        raise ConfigError(f"cannot collect {n} transitions")
    blocks = _rollout(env, policy, n, rng)
    if ledger is not None:
        ledger.add(n)
    return _transitions(blocks)


def _to_batch(p: PolicyParams, blocks) -> RolloutBatch:
    """Flatten rollout blocks and attach GAE; truncated episodes bootstrap from the critic."""
    parts = []
    for cols, complete in blocks:
        steps, m = cols["rew"].shape
        V = np.stack([ppo.value(p, cols["obs"][t]) for t in range(steps)])
        dones = np.zeros_like(cols["rew"])
        if complete:
            dones[-1] = 1.0
            boot = 0.0
        else:
            boot = ppo.value(p, cols["next"][-1])
        adv, ret = ppo.gae(cols["rew"], V, boot, p.gamma, p.gae_lambda, dones)
        parts.append((cols, V, dones, adv, ret))

    def flat(x):
        x = np.swapaxes(np.asarray(x), 0, 1)
        return x.reshape((-1,) + x.shape[2:])

    def cat(fn):
        return np.concatenate([flat(fn(*part)) for part in parts])

    return RolloutBatch(
        observations=cat(lambda c, *_: c["obs"]),
        actions=cat(lambda c, *_: c["act"]),
        log_probs=cat(lambda c, *_: c["logp"]),
        rewards=cat(lambda c, *_: c["rew"]),
        values=cat(lambda c, V, *_: V),
        dones=cat(lambda c, V, d, *_: d),
        next_observations=cat(lambda c, *_: c["next"]),
        advantages=cat(lambda c, V, d, a, r: a),
        returns=cat(lambda c, V, d, a, r: r),
        episode_returns=np.concatenate([c["rew"].sum(axis=0) for c, *_ in parts]),
    )


def collect_on_policy(env, p: PolicyParams, n: int, rng, ledger: FomLedger | None = None, horizon=None):
    """Like :func:`collect_data` but also returns the PPO batch."""
    blocks = _rollout(env, p, n, rng, horizon)
    if ledger is not None:
        ledger.add(n)
    return _to_batch(p, blocks), _transitions(blocks)


# ---------------------------------------------------------------------------
# surrogate environment
# ---------------------------------------------------------------------------


class SurrogateEnv:
    """Batched environment stepping a frozen surrogate; reward is the known analytic one.

    Initial observations come from ``base_env.initial_obs``, which samples an
    initial condition without simulating.  Nothing here touches a ledger.
    """

    def __init__(self, params: sur.SurrogateParams, base_env, horizon: int | None = None):
        self.params = params.copy()
        self.base = base_env
        self.obs_dim = base_env.obs_dim
        self.act_dim = base_env.act_dim
        self.horizon = base_env.horizon if horizon is None else horizon
        self.obs = None

    def reset(self, n: int, rng) -> np.ndarray:
        self.obs = np.asarray(self.base.initial_obs(n, rng), dtype=np.float64)
        return self.obs.copy()

    def step(self, u, rng=None):
        u = np.asarray(u, dtype=np.float64)
        return self.step_from(self.obs, u, assign=True)

    def step_from(self, x, u, assign: bool = False):
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = np.asarray(sur.predict_next(self.params, x, u), dtype=np.float64)
            r = self.base.reward(nxt, u)
        if assign:
            self.obs = nxt
        return nxt.copy(), r


def surrogate_env_step(params: sur.SurrogateParams, base_env, x, u):
    """Single surrogate transition ``(x', r)``."""
    return SurrogateEnv(params, base_env).step_from(np.asarray(x, dtype=np.float64), np.asarray(u, dtype=np.float64))


class _ModelEnv:
    """Wraps a true environment as a 'perfect surrogate' that is not ledgered."""

    def __init__(self, env):
        self.env = env
        self.obs_dim, self.act_dim, self.horizon = env.obs_dim, env.act_dim, env.horizon

    def reset(self, n, rng):
        return self.env.reset(n, rng)

    def step(self, u, rng):
        return self.env.step(u, rng)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    kind: str  # "surrogate" or "real"
    fom_interactions: int
    eval_reward_mean: float = math.nan
    eval_reward_std: float = math.nan
    extrap_reward_mean: float = math.nan
    extrap_reward_std: float = math.nan
    surr_train_loss: float = math.nan
    surr_val_loss: float = math.nan
    train_return: float = math.nan  # mean episode return of the batch used for the update
    warning: str = ""


@dataclass
class DynaResult:
    policy: PolicyParams
    records: list
    surrogate: sur.SurrogateParams | None = None
    ledger: FomLedger = field(default_factory=FomLedger)


def _eval_env_returns(env, p: PolicyParams, seeds) -> dict:
    """Deterministic episode returns on a private copy of ``env``."""
    env = copy.deepcopy(env)
    rets = []
    for s in seeds:
        rng = np.random.default_rng(s)
        obs = env.reset(1, rng)
        total = 0.0
        for _ in range(env.horizon):
            obs, r = env.step(ppo.policy_mean(p, obs), rng)
            total += float(r[0])
        rets.append(total)
    rets = np.array(rets)
    return {"eval_reward_mean": float(rets.mean()), "eval_reward_std": float(rets.std())}


def default_evaluator(env, seeds):
    """Full-order evaluation for Burgers environments, plain episode return otherwise."""
    if hasattr(env, "cfg"):
        cfg = env.cfg

        def run(p):
            res = evaluate_policy(lambda o: ppo.policy_mean(p, o), cfg, seeds, "uniform")
            return res.summary()

        return run
    return lambda p: _eval_env_returns(env, p, seeds)


def _fit_surrogate(current, store: DataStore, s: SurrogateSettings, rng):
    return sur.fit(
        current, store.arrays(), epochs=s.epochs, split=s.split, batch=s.batch, lr=s.lr, clip=s.clip, rng=rng
    )


def optimize_policy(
    env,
    config: DynaConfig,
    policy: PolicyParams | None = None,
    seed: int = 0,
    evaluator=None,
    model_env=None,
    out_dir=None,
    dry_run: bool = False,
    log=None,
) -> DynaResult:
    """Run the Dyna loop for ``config.total_epochs`` PPO updates.

    ``model_env`` replaces the learned surrogate with a given environment
    (a test hook for a perfect model).  ``dry_run`` only walks the schedule and
    fills in the FOM ledger.  With ``out_dir`` the policy and surrogate are
    checkpointed after every epoch.
    """
    cfg = config
    ledger = FomLedger()
    if dry_run:
        records = []
        if cfg.k_dyn > 1:
            ledger.add(cfg.N_off)
        for e in range(cfg.total_epochs):
            real = e % cfg.k_dyn == cfg.k_dyn - 1
            if real:
                ledger.add(cfg.N_collect)
            records.append(EpochRecord(e + 1, "real" if real else "surrogate", ledger.count))
        return DynaResult(policy, records, None, ledger)

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
    rng_real, rng_ppo, rng_fit, rng_model, rng_init = streams
    if policy is None:
        policy = ppo.init_policy(env.obs_dim, env.act_dim, seed=rng_init)
    evaluator = evaluator if evaluator is not None else default_evaluator(env, cfg.eval_seeds)
    out = Path(out_dir) if out_dir is not None else None
    s = cfg.surrogate

    store = DataStore(cfg.off_capacity, cfg.on_capacity)
    surrogate = None
    train_loss = val_loss = math.nan
    if cfg.k_dyn > 1:
        store.add_off(collect_data(env, policy, cfg.N_off, rng_real, ledger))
        if model_env is None:
            surrogate = sur.init_surrogate(
                env.obs_dim, env.act_dim, s.n_state_latent, s.n_control_latent, s.hidden_state, s.hidden_control,
                s.activation, s.deg_state, s.deg_control, s.lambda1, s.lambda2, seed=rng_init,
            )
            try:
                surrogate, rep = _fit_surrogate(surrogate, store, s, rng_fit)
                train_loss, val_loss = rep.train_loss[-1], rep.val_loss[-1]
            except sur.SurrogateDivergence as exc:
                surrogate = exc.params
                if log:
                    log(f"initial surrogate fit diverged: {exc}")

    records = []
    for e in range(cfg.total_epochs):
        real = e % cfg.k_dyn == cfg.k_dyn - 1
        warning = ""
        if real:
            batch, trans = collect_on_policy(env, policy, cfg.N_collect, rng_real, ledger)
            train = len(batch) and (cfg.k_dyn == 1 or cfg.real_updates)
            new_policy = ppo.ppo_update(policy, batch, rng=rng_ppo) if train else policy
            if cfg.k_dyn > 1:
                store.add_on(trans)
                if model_env is None:
                    try:
                        surrogate, rep = _fit_surrogate(surrogate, store, s, rng_fit)
                        train_loss, val_loss = rep.train_loss[-1], rep.val_loss[-1]
                    except sur.SurrogateDivergence as exc:
                        warning = f"surrogate refit diverged, previous surrogate kept ({exc})"
        else:
            menv = _ModelEnv(model_env) if model_env is not None else SurrogateEnv(surrogate, env, cfg.surrogate_horizon)
            n_syn = max(1, math.ceil(cfg.batch_size / menv.horizon)) * menv.horizon
            with np.errstate(over="ignore", invalid="ignore"):
                batch, _ = collect_on_policy(menv, policy, n_syn, rng_model)
            finite = all(
                np.all(np.isfinite(a)) for a in (batch.observations, batch.rewards, batch.advantages, batch.returns)
            )
            if finite:
                new_policy = ppo.ppo_update(policy, batch, rng=rng_ppo)
            else:
                new_policy = policy
                warning = "non-finite surrogate rollout, update skipped"
        if new_policy is policy and not warning and len(batch) and (not real or train):
            warning = "PPO update aborted on non-finite loss"
        policy = new_policy

        rec = EpochRecord(
            e + 1, "real" if real else "surrogate", ledger.count,
            surr_train_loss=train_loss, surr_val_loss=val_loss,
            train_return=float(np.mean(batch.episode_returns)) if len(batch) else math.nan, warning=warning,
        )
        if cfg.eval_every and ((e + 1) % cfg.eval_every == 0 or e + 1 == cfg.total_epochs):
            for k, v in evaluator(policy).items():
                setattr(rec, k, v)
        records.append(rec)
        if log:
            log(format_record(rec))
        if out is not None:
            save_checkpoint(out / "checkpoints" / f"epoch_{e + 1:04d}", policy, surrogate)
    return DynaResult(policy, records, surrogate, ledger)


def format_record(rec: EpochRecord) -> str:
    msg = (
        f"epoch {rec.epoch:4d} [{rec.kind:9s}] fom={rec.fom_interactions:6d} "
        f"eval={rec.eval_reward_mean:11.3f} train={rec.train_return:11.3f} "
        f"surr_val={rec.surr_val_loss:.3e}"
    )
    return msg + (f"  WARNING: {rec.warning}" if rec.warning else "")


def save_checkpoint(directory, policy: PolicyParams, surrogate=None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ppo.save_policy(policy, directory / "policy.json")
    if surrogate is not None:
        sur.save(surrogate, directory / "surrogate.json")


def config_to_dict(cfg: DynaConfig) -> dict:
    d = asdict(cfg)
    d["eval_seeds"] = list(cfg.eval_seeds)
    return d


def config_json(cfg: DynaConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)
