"""Running observation and reward normalization."""
from __future__ import annotations

import numpy as np


class RunningMeanStd:
    """Streaming per-dimension mean and population variance.

    Batches are folded in with the Chan et al. parallel-merge rule, so
    ``a.merge(b)`` matches accumulating the concatenated stream.
    """

    def __init__(self, shape=()):
        self.shape = tuple(shape)
        self.count = 0.0
        self.mean = np.zeros(self.shape)
        self.m2 = np.zeros(self.shape)
        self.frozen = False

    @property
    def var(self):
        if self.count == 0:
            return np.ones(self.shape)
        return self.m2 / self.count

    def update(self, batch):
        """Fold in samples stacked along axis 0. No-op while frozen."""
        if self.frozen:
            return self
        batch = np.asarray(batch, dtype=np.float64).reshape((-1, *self.shape))
        n = batch.shape[0]
        if n == 0:
            return self
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        self._merge(float(n), b_mean, b_m2)
        return self

    def merge(self, other: "RunningMeanStd"):
        if other.count:
            self._merge(other.count, other.mean, other.m2)
        return self

    def _merge(self, n_b, mean_b, m2_b):
        n_a = self.count
        n = n_a + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / n)
        self.m2 = self.m2 + m2_b + delta * delta * (n_a * n_b / n)
        self.count = n

    def normalize(self, x, eps=1e-8, clip=10.0):
        z = (np.asarray(x, dtype=np.float64) - self.mean) / np.sqrt(self.var + eps)
        return np.clip(z, -clip, clip)

    def state(self) -> np.ndarray:
        return np.concatenate([[self.count], np.ravel(self.mean), np.ravel(self.m2)])

    def load_state(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        k = int(np.prod(self.shape)) if self.shape else 1
        if flat.size != 1 + 2 * k:
            raise ValueError(f"normalizer state has {flat.size} entries, expected {1 + 2 * k}")
        self.count = float(flat[0])
        self.mean = flat[1:1 + k].reshape(self.shape).copy()
        self.m2 = flat[1 + k:].reshape(self.shape).copy()


def rms_update(stats: RunningMeanStd, batch) -> RunningMeanStd:
    return stats.update(batch)


def normalize_obs(stats: RunningMeanStd, x, eps=1e-8, clip=10.0):
    return stats.normalize(x, eps, clip)


def normalize_reward(stats_ret: RunningMeanStd, r, eps=1e-8):
    """Scale-only: divide by the std of the running discounted return."""
    return np.asarray(r, dtype=np.float64) / np.sqrt(stats_ret.var + eps)


class RewardScaler:
    """Per-env discounted-return accumulator feeding a scalar RunningMeanStd."""

    def __init__(self, num_envs, gamma, eps=1e-8):
        self.gamma = float(gamma)
        self.eps = eps
        self.returns = np.zeros(num_envs)
        self.rms = RunningMeanStd(())

    @property
    def frozen(self):
        return self.rms.frozen

    @frozen.setter
    def frozen(self, value):
        self.rms.frozen = bool(value)

    def __call__(self, rewards, dones):
        rewards = np.asarray(rewards, dtype=np.float64)
        if not self.rms.frozen:
            self.returns = self.returns * self.gamma + rewards
            self.rms.update(self.returns)
            self.returns = np.where(dones, 0.0, self.returns)
        return normalize_reward(self.rms, rewards, self.eps)
