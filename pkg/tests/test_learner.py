import math

import numpy as np
import pytest

from randpol.actor_critic import GaussianPolicy, ValueHead, build_dense, gaussian_log_prob
from randpol.envs import VelocityTrackEnv
from randpol.function_approx import RandomFeatureNet
from randpol.harness.config import TrainConfig
from randpol.learner import (
    AdamState, Learner, adam_apply, clip_grad_norm, global_norm, kl_adaptive_lr,
    surrogate_loss_and_grad, train_iteration, value_loss_and_grad,
)
from randpol.rollout import Collector

from conftest import central_diff, rel_err


def small_critic(seed=0, obs=3, J=8):
    return ValueHead(RandomFeatureNet.create(seed, obs, 1, (10,), J))


def small_actor(seed=0, obs=3, act=2, J=8):
    return GaussianPolicy(RandomFeatureNet.create(seed, obs, act, (10,), J))


# -- value loss

def test_value_loss_zero_at_targets(rng):
    c = small_critic()
    c.net.readout.weight[:] = rng.normal(size=(1, 8))
    X = rng.normal(size=(5, 3))
    loss, grads = value_loss_and_grad(c, X, c(X))
    assert loss == 0.0 and all(not g.any() for g in grads)


def test_value_loss_closed_form_single_sample(rng):
    c = small_critic()
    x = rng.normal(size=(1, 3))
    loss, grads = value_loss_and_grad(c, x, [2.0])
    f = c.net.basis.features(x)[0]
    assert loss == 4.0
    np.testing.assert_allclose(grads[0][0], -4.0 * f, rtol=1e-14)
    assert grads[1][0] == -4.0


@pytest.mark.parametrize("kind", ["randpol", "dense"])
def test_value_loss_finite_differences(kind, rng):
    for _ in range(20):
        if kind == "randpol":
            c = small_critic(int(rng.integers(1000)))
            c.net.readout.weight[:] = rng.normal(size=(1, 8))
        else:
            _, c = build_dense(3, 3, 1, rng, rng, (5, 4))
        X, y = rng.normal(size=(6, 3)), rng.normal(size=6)
        _, grads = value_loss_and_grad(c, X, y)
        num = central_diff(lambda: value_loss_and_grad(c, X, y)[0], c.parameters())
        assert rel_err(grads, num) < 1e-6


# -- surrogate

def test_surrogate_at_identity(rng):
    p = small_actor()
    p.net.readout.weight[:] = rng.normal(size=(2, 8))
    X = rng.normal(size=(7, 3))
    u, lp = p.sample(X, rng)
    adv = rng.normal(size=7)
    loss, grads, st = surrogate_loss_and_grad(p, X, u, lp, adv, 0.2, 0.01)
    assert loss == pytest.approx(-adv.mean() - 0.01 * p.entropy(), rel=1e-13)
    assert st["ratio_mean"] == pytest.approx(1.0) and st["clip_fraction"] == 0.0
    # unclipped policy-gradient estimator: -mean(A * grad log pi) - c * grad H
    pg = np.zeros_like(p.grad_log_prob(X[0], u[0]))
    for i in range(7):
        pg -= adv[i] * p.grad_log_prob(X[i], u[i]) / 7
    pg[-2:] -= 0.01
    np.testing.assert_allclose(np.concatenate([g.ravel() for g in grads]), pg, rtol=1e-10, atol=1e-13)


def _one_sample_term(ratio, adv, eps):
    p = small_actor(act=1)
    x = np.zeros((1, 3))
    u = np.array([[0.0]])
    lp = gaussian_log_prob(p.mean(x), p.log_std, u)
    loss, _, _ = surrogate_loss_and_grad(p, x, u, lp - math.log(ratio), [adv], eps, 0.0)
    return -loss


def test_surrogate_term_arithmetic():
    assert _one_sample_term(1.5, 1.0, 0.2) == pytest.approx(1.2, rel=1e-12)
    assert _one_sample_term(0.5, -1.0, 0.2) == pytest.approx(-0.8, rel=1e-12)


def test_surrogate_finite_differences_random_configurations(rng):
    done, worst = 0, 0.0
    eps = 0.2
    while done < 200:
        p = small_actor(int(rng.integers(1000)))
        for q in p.parameters():
            q[...] = rng.normal(scale=0.5, size=q.shape)
        n = 6
        X = rng.normal(size=(n, 3))
        u = rng.normal(size=(n, 2))
        cur = p.log_prob(X, u)
        old = cur + rng.normal(scale=0.3, size=n)
        ratio = np.exp(cur - old)
        if np.min(np.minimum(np.abs(ratio - (1 - eps)), np.abs(ratio - (1 + eps)))) < 1e-3:
            continue  # non-differentiable kink within reach of the difference step
        adv = rng.normal(size=n)
        coef = float(rng.uniform(0, 0.05))
        _, grads, _ = surrogate_loss_and_grad(p, X, u, old, adv, eps, coef)
        num = central_diff(lambda: surrogate_loss_and_grad(p, X, u, old, adv, eps, coef)[0],
                           p.parameters(), eps=1e-6)
        worst = max(worst, rel_err(grads, num))
        done += 1
    assert worst < 1e-5


def test_surrogate_clip_bound_property(rng):
    p = small_actor()
    X, u = rng.normal(size=(200, 3)), rng.normal(size=(200, 2))
    old = p.log_prob(X, u) + rng.normal(size=200)
    adv = rng.normal(size=200)
    ratio = np.exp(p.log_prob(X, u) - old)
    loss, _, _ = surrogate_loss_and_grad(p, X, u, old, adv, 0.2, 0.0)
    assert -loss <= np.mean(ratio * adv) + 1e-12
    assert -loss <= np.mean(np.clip(ratio, 0.8, 1.2) * adv) + 1e-12


def test_surrogate_grad_covers_only_trainable():
    p = small_actor()
    _, grads, _ = surrogate_loss_and_grad(p, np.zeros((2, 3)), np.ones((2, 2)), np.zeros(2), np.ones(2), 0.2, 0.0)
    assert [g.shape for g in grads] == [q.shape for q in p.parameters()]


# -- optimizer pieces

def test_adam_zero_gradient_is_noop():
    p = [np.array([1.0, -2.0])]
    st = AdamState.for_params(p)
    for _ in range(50):
        adam_apply(p, [np.zeros(2)], st, 0.1)
    assert np.array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_hand_computed():
    p = [np.array([0.0])]
    adam_apply(p, [np.array([1.0])], AdamState.for_params(p), 0.1)
    # m_hat = 1, v_hat = 1  ->  delta = -0.1 / (1 + 1e-8)
    assert p[0][0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-15)


def test_adam_matches_reference_loop(rng):
    p = [rng.normal(size=3)]
    ref = p[0].copy()
    m = v = np.zeros(3)
    st = AdamState.for_params(p)
    for t in range(1, 6):
        g = rng.normal(size=3)
        adam_apply(p, [g], st, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p[0], ref, rtol=1e-13)


def test_adam_deterministic(rng):
    g = [rng.normal(size=4)]
    a, b = [np.ones(4)], [np.ones(4)]
    adam_apply(a, g, AdamState.for_params(a), 0.1)
    adam_apply(b, g, AdamState.for_params(b), 0.1)
    assert np.array_equal(a[0], b[0])


def test_clip_grad_norm_examples(rng):
    g = [np.array([0.3, 0.0])]
    out, n = clip_grad_norm(g, 0.5)
    assert n == pytest.approx(0.3) and np.array_equal(out[0], g[0])
    g = [np.array([1.2]), np.array([[1.6]])]
    out, n = clip_grad_norm(g, 0.5)
    assert n == pytest.approx(2.0)
    assert out[0][0] == pytest.approx(0.3) and out[1][0, 0] == pytest.approx(0.4)
    assert global_norm(out) == pytest.approx(0.5, rel=1e-14)
    g = [rng.normal(size=5), rng.normal(size=(2, 3))]
    out, _ = clip_grad_norm(g, 0.1)
    a, b = np.concatenate([x.ravel() for x in g]), np.concatenate([x.ravel() for x in out])
    assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) == pytest.approx(1.0, abs=1e-12)


def test_kl_adaptive_rule():
    assert kl_adaptive_lr(1e-3, 0.01, 0.01) == 1e-3
    assert kl_adaptive_lr(1e-3, 0.03, 0.01) == pytest.approx(1e-3 / 1.5)
    assert kl_adaptive_lr(1e-3, 0.001, 0.01) == pytest.approx(1.5e-3)
    assert kl_adaptive_lr(1e-6, 1.0, 0.01) == 1e-6
    assert kl_adaptive_lr(1e-2, 0.0, 0.01) == 1e-2


# -- iteration

def _setup(algorithm="randpol", seed=0, **kw):
    cfg = TrainConfig.defaults(algorithm, num_envs=4, horizon=16, basis_hidden=(20,), feature_dim=16,
                               dense_hidden=(16, 8), **kw)
    env = VelocityTrackEnv(4, seed=seed)
    if algorithm == "randpol":
        from randpol.actor_critic import build_randpol
        actor, critic = build_randpol(8, 12, 2, 1, 2, (20,), 16)
    else:
        actor, critic = build_dense(8, 12, 2, np.random.default_rng(1), np.random.default_rng(2), (16, 8))
    return cfg, actor, critic, Collector(env), Learner(actor, critic, cfg)


def test_iteration_keeps_frozen_basis_and_changes_trainables():
    cfg, actor, critic, col, learner = _setup()
    before = (actor.net.basis.checksum(), critic.net.basis.checksum())
    params = [p.copy() for p in actor.parameters() + critic.parameters()]
    rep = train_iteration(actor, critic, col, learner, cfg, np.random.default_rng(0))
    assert (actor.net.basis.checksum(), critic.net.basis.checksum()) == before
    assert all(not np.array_equal(a, b) for a, b in zip(params, actor.parameters() + critic.parameters()))
    assert rep.learn_time > 0 and rep.collect_time > 0 and not rep.diverged


@pytest.mark.parametrize("algorithm", ["randpol", "dense_baseline"])
def test_iteration_reports_deterministic(algorithm):
    reports = []
    for _ in range(2):
        cfg, actor, critic, col, learner = _setup(algorithm)
        rng = np.random.default_rng(3)
        reports.append([train_iteration(actor, critic, col, learner, cfg, rng) for _ in range(3)])
    fields = ("value_loss", "surrogate_loss", "entropy", "kl", "clip_fraction", "actor_grad_norm",
              "critic_grad_norm", "learning_rate")
    for a, b in zip(*reports):
        assert [getattr(a, f) for f in fields] == [getattr(b, f) for f in fields]


class ZeroRewardEnv:
    obs_dim = privileged_dim = 3
    action_dim = 1

    def __init__(self, num_envs, seed):
        self.num_envs = num_envs
        self.rng = np.random.default_rng(seed)

    def _obs(self):
        o = self.rng.normal(size=(self.num_envs, 3))
        return o, o.copy()

    def reset(self):
        return self._obs()

    def step(self, actions):
        from randpol.envs import StepResult
        o, p = self._obs()
        z = np.zeros(self.num_envs)
        nan = np.full(self.num_envs, np.nan)
        info = {"components": {}, "v_error": nan, "w_error": nan, "final_obs": o, "final_priv": p,
                "episodes": {}}
        return StepResult(o, p, z, z.astype(bool), z.astype(bool), info)


def test_critic_loss_decreases_on_zero_reward_env():
    # the true value of every state is 0, so the critic must regress its offset away
    cfg = TrainConfig.defaults("randpol", num_envs=8, horizon=16, gamma=0.5, lr=1e-2)
    actor = small_actor(obs=3, act=1)
    critic = small_critic(obs=3, J=8)
    critic.net.readout.bias[:] = 3.0
    col = Collector(ZeroRewardEnv(8, 0))
    learner = Learner(actor, critic, cfg)
    rng = np.random.default_rng(0)
    losses = [train_iteration(actor, critic, col, learner, cfg, rng).value_loss for _ in range(60)]
    assert losses[-1] < 0.05 * losses[0]
    probe = col.norm_priv(np.random.default_rng(1).normal(size=(256, 3)))
    assert np.abs(critic(probe)).mean() < 0.3


def test_divergence_restores_parameters():
    cfg, actor, critic, col, learner = _setup()
    buf = col.collect(actor, critic, cfg.horizon, np.random.default_rng(0))
    buf.log_probs[:] = -1e6  # ratio overflows
    params = [p.copy() for p in actor.parameters() + critic.parameters()]
    rep = learner.update(buf, np.random.default_rng(0))
    assert rep.diverged and "ratio" in rep.message
    assert all(np.array_equal(a, b) for a, b in zip(params, actor.parameters() + critic.parameters()))
    assert learner.actor_opt.step == 0 and learner.critic_opt.step == 0


def test_log_std_stays_clamped():
    cfg, actor, critic, col, learner = _setup(lr=1.0)
    for _ in range(3):
        train_iteration(actor, critic, col, learner, cfg, np.random.default_rng(0))
        assert np.all(actor.log_std >= -5) and np.all(actor.log_std <= 2)
