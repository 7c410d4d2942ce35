"""Diagonal Gaussian policy and state-value head over either representation."""
from __future__ import annotations

import numpy as np

from .function_approx import DenseNet, RandomFeatureNet

LOG_2PI = np.log(2.0 * np.pi)


def gaussian_log_prob(mu, log_std, u):
    """Sum over the last axis of independent normal log-densities."""
    mu = np.asarray(mu, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    z = (u - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def flatten(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])


class GaussianPolicy:
    """N(mu(x), diag(exp(2 log_std))) with a state-independent covariance.

    ``log_std`` is trainable and clamped to ``log_std_bounds`` after every
    optimizer step (see ``clamp``).
    """

    def __init__(self, net, log_std_init=0.0, log_std_bounds=(-5.0, 2.0)):
        self.net = net
        self.action_dim = net.output_dim
        self.log_std_bounds = (float(log_std_bounds[0]), float(log_std_bounds[1]))
        self.log_std = np.full(self.action_dim, float(log_std_init))
        self.clamp()

    @property
    def variant(self) -> str:
        return self.net.kind

    @property
    def std(self):
        return np.exp(self.log_std)

    def clamp(self):
        np.clip(self.log_std, *self.log_std_bounds, out=self.log_std)

    def mean(self, x):
        return self.net(x)

    def sample(self, x, rng):
        mu = self.mean(x)
        return self.sample_from_mean(mu, rng)

    def sample_from_mean(self, mu, rng):
        z = rng.standard_normal(mu.shape)
        u = mu + self.std * z
        return u, gaussian_log_prob(mu, self.log_std, u)

    def log_prob(self, x, u):
        return gaussian_log_prob(self.mean(x), self.log_std, u)

    def entropy(self) -> float:
        return float(np.sum(0.5 * (1.0 + LOG_2PI) + self.log_std))

    def backward(self, tape, mean_grad, log_std_grad):
        """Chain an upstream gradient on (mean, log_std) into trainable params."""
        return [*self.net.backward(tape, mean_grad), np.asarray(log_std_grad, dtype=np.float64)]

    def grad_log_prob(self, x, u) -> np.ndarray:
        """Flat gradient of sum_n log pi(u_n | x_n) over trainable parameters.

        Order is ``parameters()``: readout (or dense layers) then log_std.
        """
        mu, tape = self.net.forward_code(self.net.encode(x))
        u = np.asarray(u, dtype=np.float64).reshape(mu.shape)
        var = np.exp(2.0 * self.log_std)
        score_mu = (u - mu) / var
        z2 = (u - mu) ** 2 / var
        d_log_std = np.sum(z2 - 1.0, axis=tuple(range(z2.ndim - 1))) if z2.ndim > 1 else z2 - 1.0
        return flatten(self.backward(tape, score_mu, d_log_std))

    def parameters(self) -> list[np.ndarray]:
        return [*self.net.parameters(), self.log_std]

    def num_trainable(self) -> int:
        return self.net.num_trainable() + self.action_dim

    def num_total(self) -> int:
        return self.net.num_total() + self.action_dim

    def frozen_arrays(self):
        return self.net.frozen_arrays()


class ValueHead:
    """Scalar state-value function V(x)."""

    def __init__(self, net):
        if net.output_dim != 1:
            raise ValueError("value head needs a scalar output")
        self.net = net

    @property
    def variant(self) -> str:
        return self.net.kind

    def __call__(self, x):
        out, _ = self.net.forward_code(self.net.encode(x))
        return out[..., 0]

    def parameters(self) -> list[np.ndarray]:
        return self.net.parameters()

    def num_trainable(self) -> int:
        return self.net.num_trainable()

    def num_total(self) -> int:
        return self.net.num_total()

    def frozen_arrays(self):
        return self.net.frozen_arrays()


def policy_mean(p: GaussianPolicy, x):
    return p.mean(x)


def sample_action(p: GaussianPolicy, x, rng):
    return p.sample(x, rng)


def log_prob_of(p: GaussianPolicy, x, u):
    return p.log_prob(x, u)


def entropy(p: GaussianPolicy) -> float:
    return p.entropy()


def value_of(v: ValueHead, x):
    return v(x)


def policy_grad_log_prob(p: GaussianPolicy, x, u):
    return p.grad_log_prob(x, u)


def build_randpol(obs_dim, critic_obs_dim, action_dim, actor_seed, critic_seed,
                  hidden_widths=(500,), feature_dim=400, log_std_init=0.0,
                  log_std_bounds=(-5.0, 2.0)):
    """Actor and critic on separate frozen bases, zero-initialized readouts."""
    actor = GaussianPolicy(
        RandomFeatureNet.create(actor_seed, obs_dim, action_dim, hidden_widths, feature_dim),
        log_std_init, log_std_bounds)
    critic = ValueHead(RandomFeatureNet.create(critic_seed, critic_obs_dim, 1, hidden_widths, feature_dim))
    return actor, critic


def build_dense(obs_dim, critic_obs_dim, action_dim, actor_rng, critic_rng,
                hidden_dims=(512, 256, 128), log_std_init=0.0, log_std_bounds=(-5.0, 2.0)):
    actor_net = DenseNet([obs_dim, *hidden_dims, action_dim], rng=actor_rng)
    # small initial output layer keeps the untrained mean near zero
    actor_net.weights[-1] *= 0.01
    actor_net.biases[-1][:] = 0.0
    critic_net = DenseNet([critic_obs_dim, *hidden_dims, 1], rng=critic_rng)
    return GaussianPolicy(actor_net, log_std_init, log_std_bounds), ValueHead(critic_net)
