"""Critic regression, clipped-surrogate actor update, Adam and the update loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .actor_critic import gaussian_log_prob
from .harness.timing import Timer
from .rollout import compute_gae, minibatch_iter, normalize_advantages


class DivergenceError(FloatingPointError):
    """Raised when a loss or probability ratio stops being finite."""


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v],
                         self.step, self.beta1, self.beta2, self.eps)


def adam_apply(params, grads, state: AdamState, lr):
    """In-place bias-corrected Adam step on ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must align")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {np.shape(p)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        p -= (lr / c1) * m / denom
    return params


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def clip_grad_norm(grads, max_norm):
    """Rescale all gradients together so their global L2 norm is <= max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


def kl_adaptive_lr(current_lr, mean_kl, target_kl, factor=1.5, lr_min=1e-6, lr_max=1e-2):
    if current_lr <= 0:
        raise ValueError("learning rate must be positive")
    lr = current_lr
    if mean_kl > 2.0 * target_kl:
        lr = lr / factor
    elif mean_kl < 0.5 * target_kl:
        lr = lr * factor
    return min(max(lr, lr_min), lr_max)


def value_loss_and_grad(critic, obs, targets, code=None):
    """Mean squared error of V against targets, and its gradient.

    ``code`` may carry a pre-encoded batch (frozen features) to skip
    re-running the frozen layers.
    """
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        raise ValueError("empty batch")
    if code is None:
        code = critic.net.encode(obs)
    out, tape = critic.net.forward_code(code)
    err = out[:, 0] - targets
    loss = float(np.mean(err * err))
    if not math.isfinite(loss):
        raise DivergenceError("value loss is not finite")
    grads = critic.net.backward(tape, (2.0 / targets.size) * err[:, None])
    return loss, grads


def surrogate_loss_and_grad(policy, obs, actions, old_log_probs, advantages, epsilon,
                            entropy_coef, code=None):
    """Clipped surrogate loss with entropy bonus; gradient over trainable params.

    Returns ``(loss, grads, stats)`` with stats keys ``clip_fraction``,
    ``kl`` (mean of old minus new log-prob), ``entropy`` and ``ratio_mean``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    adv = np.asarray(advantages, dtype=np.float64).reshape(-1)
    n = adv.size
    if n == 0:
        raise ValueError("empty batch")
    if code is None:
        code = policy.net.encode(obs)
    mu, tape = policy.net.forward_code(code)
    u = np.asarray(actions, dtype=np.float64).reshape(mu.shape)
    old = np.asarray(old_log_probs, dtype=np.float64).reshape(-1)
    log_std = policy.log_std
    logp = gaussian_log_prob(mu, log_std, u)
    with np.errstate(over="ignore"):
        ratio = np.exp(logp - old)
    if not np.all(np.isfinite(ratio)):
        raise DivergenceError("probability ratio is not finite")
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    term = np.minimum(unclipped_term, clipped_term)
    ent = policy.entropy()
    loss = float(-term.mean() - entropy_coef * ent)
    if not math.isfinite(loss):
        raise DivergenceError("surrogate loss is not finite")

    # the ratio carries gradient only where the unclipped branch is the minimum
    live = unclipped_term <= clipped_term
    w = -(live * ratio * adv) / n          # d loss / d logp_n
    inv_var = np.exp(-2.0 * log_std)
    diff = u - mu
    d_mu = w[:, None] * diff * inv_var
    d_log_std = (w[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - entropy_coef
    grads = policy.backward(tape, d_mu, d_log_std)
    stats = {
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > epsilon)),
        "kl": float(np.mean(old - logp)),
        "entropy": ent,
        "ratio_mean": float(ratio.mean()),
    }
    return loss, grads, stats


@dataclass
class UpdateReport:
    value_loss: float = float("nan")
    surrogate_loss: float = float("nan")
    entropy: float = float("nan")
    kl: float = float("nan")
    clip_fraction: float = float("nan")
    actor_grad_norm: float = float("nan")
    critic_grad_norm: float = float("nan")
    learning_rate: float = float("nan")
    learn_time: float = 0.0
    collect_time: float = 0.0
    diverged: bool = False
    message: str = ""
    rollout: object = field(default=None, repr=False, compare=False)


class Learner:
    """Optimizer state plus the epoch/minibatch update of one iteration.

    ``cfg`` needs: gamma, lam, epochs, minibatches, clip_epsilon,
    entropy_coef, lr, grad_clip, kl_adaptive, kl_target, normalize_advantages.
    Actor and critic keep separate Adam states; per minibatch the critic is
    stepped first, then the actor.
    """

    def __init__(self, policy, critic, cfg):
        self.policy = policy
        self.critic = critic
        self.cfg = cfg
        self.lr = float(cfg.lr)
        self.actor_opt = AdamState.for_params(policy.parameters())
        self.critic_opt = AdamState.for_params(critic.parameters())

    def _snapshot(self):
        return ([p.copy() for p in self.policy.parameters()],
                [p.copy() for p in self.critic.parameters()],
                self.actor_opt.copy(), self.critic_opt.copy(), self.lr)

    def _restore(self, snap):
        ap, cp, aopt, copt, lr = snap
        for dst, src in zip(self.policy.parameters(), ap):
            dst[...] = src
        for dst, src in zip(self.critic.parameters(), cp):
            dst[...] = src
        self.actor_opt, self.critic_opt, self.lr = aopt, copt, lr
        self.policy.net.bump()
        self.critic.net.bump()

    def update(self, buffer, rng) -> UpdateReport:
        cfg = self.cfg
        compute_gae(buffer, cfg.gamma, cfg.lam)
        if cfg.normalize_advantages:
            normalize_advantages(buffer)
        obs = buffer.flat("obs")
        cobs = buffer.flat("critic_obs")
        actions = buffer.flat("actions")
        old_lp = buffer.flat("log_probs")
        adv = buffer.flat("advantages")
        targets = buffer.flat("value_targets")
        # frozen layers are evaluated once per iteration; identity for dense nets
        actor_code = self.policy.net.encode(obs)
        critic_code = self.critic.net.encode(cobs)

        snap = self._snapshot()
        sums = {k: 0.0 for k in ("value_loss", "surrogate_loss", "entropy", "kl",
                                 "clip_fraction", "actor_grad_norm", "critic_grad_norm")}
        count = 0
        try:
            for idx in minibatch_iter(len(buffer), cfg.epochs, cfg.minibatches, rng):
                vloss, vgrads = value_loss_and_grad(self.critic, None, targets[idx], code=critic_code[idx])
                vgrads, vnorm = clip_grad_norm(vgrads, cfg.grad_clip)
                adam_apply(self.critic.parameters(), vgrads, self.critic_opt, self.lr)
                self.critic.net.bump()

                ploss, pgrads, st = surrogate_loss_and_grad(
                    self.policy, None, actions[idx], old_lp[idx], adv[idx],
                    cfg.clip_epsilon, cfg.entropy_coef, code=actor_code[idx])
                if cfg.kl_adaptive:
                    self.lr = kl_adaptive_lr(self.lr, st["kl"], cfg.kl_target)
                pgrads, pnorm = clip_grad_norm(pgrads, cfg.grad_clip)
                adam_apply(self.policy.parameters(), pgrads, self.actor_opt, self.lr)
                self.policy.clamp()
                self.policy.net.bump()

                sums["value_loss"] += vloss
                sums["surrogate_loss"] += ploss
                sums["entropy"] += st["entropy"]
                sums["kl"] += st["kl"]
                sums["clip_fraction"] += st["clip_fraction"]
                sums["actor_grad_norm"] += pnorm
                sums["critic_grad_norm"] += vnorm
                count += 1
            if not all(np.isfinite(a).all() for a in self.policy.parameters()):
                raise DivergenceError("actor parameters are not finite")
        except DivergenceError as exc:
            self._restore(snap)
            return UpdateReport(diverged=True, message=str(exc), learning_rate=self.lr)
        means = {k: v / count for k, v in sums.items()}
        return UpdateReport(learning_rate=self.lr, **means)


def train_iteration(policy, critic, collector, learner: Learner, cfg, rng,
                    minibatch_rng=None, timer: Timer | None = None) -> UpdateReport:
    """Collect one rollout, then run the learning phase on it.

    Learning time covers everything after collection returns (GAE, advantage
    normalization, encoding, all minibatch updates).
    """
    timer = timer or Timer()
    minibatch_rng = minibatch_rng if minibatch_rng is not None else rng
    with timer.section("collect"):
        t0 = timer.clock()
        buffer = collector.collect(policy, critic, cfg.horizon, rng)
        collect_time = timer.clock() - t0
    with timer.section("learn"):
        t0 = timer.clock()
        report = learner.update(buffer, minibatch_rng)
        learn_time = timer.clock() - t0
    report.collect_time = collect_time
    report.learn_time = learn_time
    report.rollout = buffer
    return report
