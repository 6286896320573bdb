import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aesindyc import ndiff, ppo
from aesindyc.errors import CheckpointError, ConfigError, ShapeError
from aesindyc.integrator import IntegratorEnv

from oracles import gae_double_sum


def _policy(obs=3, act=2, seed=0, **kw):
    return ppo.init_policy(obs, act, hidden=16, seed=seed, **kw)


def _batch(p, n=64, seed=0, adv=None):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, p.obs_dim))
    act, lp = ppo.policy_sample(p, obs, rng)
    adv = rng.normal(size=n) if adv is None else adv
    ret = rng.normal(size=n)
    z = np.zeros(n)
    return ppo.RolloutBatch(obs, act, lp, z, z, z, obs, advantages=adv, returns=ret)


# --- sampling -------------------------------------------------------------------


def test_architecture():
    p = ppo.init_policy(48, 8)
    assert p.actor.layer_sizes == [48, 128, 8] and p.critic.layer_sizes == [48, 128, 1]
    assert p.log_std.shape == (8,)
    assert (p.clip_eps, p.gamma, p.gae_lambda, p.lr, p.sgd_batch, p.grad_clip) == (0.2, 0.99, 0.95, 3e-4, 256, 0.5)


def test_invalid_hyper():
    with pytest.raises(ConfigError):
        _policy(gamma=1.5)


def test_tight_gaussian_at_floor():
    p = _policy(log_std_init=-10.0)
    assert np.all(p.log_std == -5.0)
    obs = np.random.default_rng(1).normal(size=(2000, 3))
    a, _ = ppo.policy_sample(p, obs, np.random.default_rng(2))
    inside = np.abs(a - ppo.policy_mean(p, obs)) <= 3 * math.exp(-5)
    assert inside.mean() > 0.99


def test_log_prob_at_mean():
    p = _policy(log_std_init=-0.3)
    obs = np.ones((1, 3))
    lp = ppo.log_prob(p, obs, ppo.policy_mean(p, obs))
    assert float(lp[0]) == pytest.approx(sum(-s - 0.5 * math.log(2 * math.pi) for s in p.log_std), rel=1e-14)


def test_log_prob_matches_scipy_free_formula():
    p = _policy(log_std_init=0.4)
    rng = np.random.default_rng(3)
    obs = rng.normal(size=(5, 3))
    a, lp = ppo.policy_sample(p, obs, rng)
    m = ppo.policy_mean(p, obs)
    sd = np.exp(p.log_std)
    ref = [sum(-0.5 * ((a[i, j] - m[i, j]) / sd[j]) ** 2 - math.log(sd[j]) - 0.5 * math.log(2 * math.pi) for j in range(2)) for i in range(5)]
    assert np.allclose(lp, ref, rtol=1e-13)


def test_sample_std_moment():
    p = _policy(log_std_init=-0.7)
    obs = np.zeros((100_000, 3))
    a, _ = ppo.policy_sample(p, obs, np.random.default_rng(0))
    assert np.all(np.abs(a.std(axis=0) / np.exp(p.log_std) - 1) < 0.05)


def test_sample_shape_error():
    with pytest.raises(ShapeError):
        ppo.policy_sample(_policy(), np.ones(4), np.random.default_rng(0))


# --- GAE ------------------------------------------------------------------------


def test_gae_single_terminal_step():
    adv, ret = ppo.gae([2.0], [0.5], 0.0, 1.0, 1.0, dones=[1.0])
    assert adv[0] == 1.5 and ret[0] == 2.0


def test_gae_zero_deltas():
    gamma = 0.9
    v = np.array([3.0, 2.0, 1.0])
    # r_t = V_t - gamma V_{t+1} makes every delta vanish
    r = v - gamma * np.array([2.0, 1.0, 4.0])
    adv, _ = ppo.gae(r, v, 4.0, gamma, 0.95)
    assert np.allclose(adv, 0.0, atol=1e-15)


@given(st.integers(1, 40), st.floats(0.5, 1.0), st.floats(0.0, 1.0), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_gae_matches_double_sum(T, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    r, v, boot = rng.normal(size=T), rng.normal(size=T), rng.normal()
    adv, ret = ppo.gae(r, v, boot, gamma, lam)
    ref = gae_double_sum(r, v, boot, gamma, lam)
    assert np.max(np.abs(adv - ref)) <= 1e-10
    assert np.allclose(ret, ref + v, rtol=0, atol=1e-10)


def test_gae_batched_columns_independent():
    rng = np.random.default_rng(1)
    r, v = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    adv, _ = ppo.gae(r, v, 0.0, 0.99, 0.95)
    for j in range(3):
        assert np.allclose(adv[:, j], gae_double_sum(r[:, j], v[:, j], 0.0, 0.99, 0.95), rtol=0, atol=1e-10)


def test_gae_dones_cut_bootstrap():
    adv, _ = ppo.gae([1.0, 1.0], [0.0, 0.0], 100.0, 1.0, 1.0, dones=[1.0, 1.0])
    assert np.array_equal(adv, [1.0, 1.0])


def test_gae_shape_error():
    with pytest.raises(ShapeError):
        ppo.gae(np.ones(3), np.ones(4), 0.0, 0.99, 0.95)


@given(st.integers(2, 500), st.integers(0, 10_000), st.floats(1e-3, 1e3))
@settings(max_examples=50, deadline=None)
def test_advantage_normalization(n, seed, scale):
    a = ppo.normalize(np.random.default_rng(seed).normal(size=n) * scale + 7)
    assert abs(a.mean()) < 1e-8 and abs(a.std() - 1) < 1e-6


# --- objective ------------------------------------------------------------------


def test_clip_arithmetic():
    p = _policy()
    b = _batch(p, adv=np.full(64, 2.0))
    b.log_probs = ppo.log_prob(p, b.observations, b.actions) - math.log(1.5)
    assert np.allclose(ppo.clipped_objective(p, b), 1.2 * 2.0, rtol=1e-12)


def _policy_grad(p, b, eps):
    q = ppo.PolicyParams(**{**p.__dict__, "clip_eps": eps, "vf_coef": 0.0})
    args = (b.observations, b.actions, b.log_probs, b.advantages, b.returns)
    _, g = ndiff.grad(lambda blk: ppo._ppo_loss(q.with_blocks(blk), *args), p.blocks())
    return g


def _vanilla_grad(p, b):
    def loss(blk):
        q = p.with_blocks(blk)
        logp = ppo._log_prob(ndiff.mlp_forward(q.actor, b.observations), q.log_std, b.actions)
        return ndiff.neg(ndiff.tmean(ndiff.mul(logp, b.advantages)))

    return ndiff.grad(loss, p.blocks())[1]


@pytest.mark.parametrize("eps", [0.2, 0.0])
def test_first_pass_gradient_is_vanilla(eps):
    p = _policy(seed=4)
    b = _batch(p, seed=5)
    b.log_probs = ppo.log_prob(p, b.observations, b.actions)
    g, ref = _policy_grad(p, b, eps), _vanilla_grad(p, b)
    for k in ref:
        if k.startswith("critic"):
            continue
        assert np.allclose(g[k], ref[k], rtol=1e-10, atol=1e-13), k


# --- update ---------------------------------------------------------------------


def test_update_deterministic():
    p = _policy()
    b = _batch(p)
    a = ppo.ppo_update(p, b, rng=np.random.default_rng(1))
    c = ppo.ppo_update(p, b, rng=np.random.default_rng(1))
    assert all(np.array_equal(a.blocks()[k], c.blocks()[k]) for k in a.blocks())


def test_update_changes_params_and_keeps_shapes():
    p = _policy()
    q = ppo.ppo_update(p, _batch(p), epochs=2, rng=np.random.default_rng(0))
    assert any(not np.array_equal(p.blocks()[k], q.blocks()[k]) for k in p.blocks())
    assert all(p.blocks()[k].shape == q.blocks()[k].shape for k in p.blocks())


def test_nonfinite_update_keeps_previous():
    p = _policy()
    b = _batch(p)
    b.returns = b.returns.copy()
    b.returns[3] = np.nan
    q = ppo.ppo_update(p, b, rng=np.random.default_rng(0))
    assert q is p


@given(st.integers(0, 1000), st.floats(-3.0, 3.0))
@settings(max_examples=15, deadline=None)
def test_log_std_stays_bounded(seed, sign):
    p = _policy(seed=seed, log_std_init=1.9 if sign > 0 else -4.9, lr=0.5)
    b = _batch(p, seed=seed, adv=np.full(64, sign) + np.random.default_rng(seed).normal(size=64))
    for _ in range(3):
        p = ppo.ppo_update(p, b, epochs=5, rng=np.random.default_rng(seed))
        assert np.all(p.log_std >= ppo.LOG_STD_MIN) and np.all(p.log_std <= ppo.LOG_STD_MAX)


def test_collect_rollouts_integrator():
    env = IntegratorEnv(horizon=5)
    p = ppo.init_policy(1, 1, hidden=8, seed=0)
    b = ppo.collect_rollouts(env, p, 3, np.random.default_rng(0))
    assert len(b) == 15 and b.dones.sum() == 3 and np.all(b.dones[4::5] == 1)
    assert np.allclose(b.episode_returns, b.rewards.reshape(3, 5).sum(axis=1))
    assert np.array_equal(b.observations[1:5], b.next_observations[0:4])
    for e in range(3):
        s = slice(5 * e, 5 * e + 5)
        ref = gae_double_sum(b.rewards[s], b.values[s], 0.0, p.gamma, p.gae_lambda)
        assert np.allclose(b.advantages[s], ref, rtol=0, atol=1e-10)


def test_integrator_improves_short_run():
    env = IntegratorEnv()
    rng = np.random.default_rng(0)
    p = ppo.init_policy(1, 1, hidden=32, seed=0)
    first = ppo.collect_rollouts(env, p, 32, rng).episode_returns.mean()
    for _ in range(40):
        p = ppo.ppo_update(p, ppo.collect_rollouts(env, p, 8, rng), rng=rng)
    last = ppo.collect_rollouts(env, p, 32, rng).episode_returns.mean()
    assert last > first


# --- checkpoints ----------------------------------------------------------------


def test_policy_round_trip(tmp_path):
    p = _policy(log_std_init=-1.0, clip_eps=0.5)
    ppo.save_policy(p, tmp_path / "p.json")
    q = ppo.load_policy(tmp_path / "p.json")
    assert q.hyper() == p.hyper()
    assert all(np.array_equal(p.blocks()[k], q.blocks()[k]) for k in p.blocks())


def test_policy_truncated(tmp_path):
    path = tmp_path / "p.json"
    ppo.save_policy(_policy(), path)
    path.write_text(path.read_text()[:50])
    with pytest.raises(CheckpointError):
        ppo.load_policy(path)
    with pytest.raises(CheckpointError):
        ppo.load_policy(tmp_path / "missing.json")
