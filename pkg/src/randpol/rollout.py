"""On-policy rollout collection, GAE and minibatch indexing.

Arrays in a ``RolloutBuffer`` are laid out (num_envs, horizon, ...).
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .normalize import RewardScaler, RunningMeanStd


@dataclass(eq=False)
class RolloutBuffer:
    obs: np.ndarray            # normalized actor inputs
    critic_obs: np.ndarray     # normalized privileged inputs
    actions: np.ndarray
    rewards: np.ndarray        # training rewards (scaled when reward normalization is on)
    dones: np.ndarray
    truncated: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray      # behavior policy, fixed at collection time
    next_values: np.ndarray    # V of the true successor state (pre-reset on done)
    raw_rewards: np.ndarray | None = None
    stats: dict = field(default_factory=dict)
    advantages: np.ndarray | None = None
    value_targets: np.ndarray | None = None

    @property
    def num_envs(self) -> int:
        return self.rewards.shape[0]

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]

    @property
    def bootstrap_values(self) -> np.ndarray:
        return self.next_values[:, -1]

    def __len__(self):
        return self.rewards.size

    def flat(self, name):
        a = getattr(self, name)
        if a is None:
            raise RuntimeError(f"{name} not populated; run compute_gae first")
        return a.reshape(self.rewards.size, *a.shape[2:])


def compute_gae(buffer: RolloutBuffer, gamma=0.99, lam=0.95) -> RolloutBuffer:
    """Fill ``advantages`` and ``value_targets`` by the backward GAE recursion.

    A done step cuts the recursion. Only non-truncated dones drop the
    bootstrap term; time-limit truncations still add gamma * V(next).
    """
    if not 0.0 < gamma < 1.0 or not 0.0 <= lam <= 1.0:
        raise ValueError(f"need gamma in (0,1) and lambda in [0,1], got {gamma}, {lam}")
    if buffer.values is None or buffer.next_values is None:
        raise RuntimeError("buffer has no values; collect first")
    dones = buffer.dones.astype(bool)
    terminal = dones & ~buffer.truncated.astype(bool)
    adv = np.zeros_like(buffer.rewards, dtype=np.float64)
    last = np.zeros(buffer.num_envs)
    for t in reversed(range(buffer.horizon)):
        delta = (buffer.rewards[:, t] + gamma * buffer.next_values[:, t] * (~terminal[:, t])
                 - buffer.values[:, t])
        last = delta + gamma * lam * (~dones[:, t]) * last
        adv[:, t] = last
    buffer.advantages = adv
    buffer.value_targets = adv + buffer.values
    return buffer


def normalize_advantages(buffer: RolloutBuffer, eps=1e-8) -> RolloutBuffer:
    """Standardize advantages over the whole buffer (population std).

    The divisor is ``max(std, eps)``: the result has unit std exactly whenever
    std >= eps, and a constant buffer comes out as zeros.
    """
    if buffer.advantages is None:
        raise RuntimeError("advantages not computed")
    a = buffer.advantages
    buffer.advantages = (a - a.mean()) / max(float(a.std()), eps)
    return buffer


def minibatch_iter(n, num_epochs, num_minibatches, rng):
    """Yield index arrays: per epoch a fresh permutation split into near-equal parts."""
    n = len(n) if hasattr(n, "__len__") else int(n)
    if num_minibatches < 1 or num_minibatches > n:
        raise ValueError(f"cannot split {n} transitions into {num_minibatches} minibatches")
    for _ in range(num_epochs):
        yield from np.array_split(rng.permutation(n), num_minibatches)


class Collector:
    """Owns an environment batch, its current observation and the normalizers.

    Normalizer statistics are updated once per raw observation produced by
    the environments (reset observations and post-step observations).
    """

    def __init__(self, envs, gamma=0.99, normalize_obs=True, normalize_reward=True,
                 obs_clip=10.0, episode_window=100):
        self.envs = envs
        self.normalize_obs = normalize_obs
        self.normalize_reward = normalize_reward
        self.obs_clip = obs_clip
        self.obs_rms = RunningMeanStd((envs.obs_dim,))
        self.priv_rms = RunningMeanStd((envs.privileged_dim,))
        self.reward_scaler = RewardScaler(envs.num_envs, gamma)
        self.recent_episodes = deque(maxlen=episode_window)
        self.raw_obs, self.raw_priv = envs.reset()
        self._observe_stats(self.raw_obs, self.raw_priv)

    def freeze(self, frozen=True):
        self.obs_rms.frozen = frozen
        self.priv_rms.frozen = frozen
        self.reward_scaler.frozen = frozen

    def _observe_stats(self, obs, priv):
        if self.normalize_obs:
            self.obs_rms.update(obs)
            self.priv_rms.update(priv)

    def norm_obs(self, obs):
        return self.obs_rms.normalize(obs, clip=self.obs_clip) if self.normalize_obs else np.asarray(obs, float)

    def norm_priv(self, priv):
        return self.priv_rms.normalize(priv, clip=self.obs_clip) if self.normalize_obs else np.asarray(priv, float)

    def normalizers(self) -> dict[str, RunningMeanStd]:
        return {"obs": self.obs_rms, "privileged": self.priv_rms, "return": self.reward_scaler.rms}

    def collect(self, policy, critic, horizon, rng) -> RolloutBuffer:
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        envs = self.envs
        n, m = envs.num_envs, envs.action_dim
        shape = (n, horizon)
        obs = np.zeros((*shape, envs.obs_dim))
        cobs = np.zeros((*shape, envs.privileged_dim))
        actions = np.zeros((*shape, m))
        rewards, raw_rewards = np.zeros(shape), np.zeros(shape)
        dones, truncs = np.zeros(shape, bool), np.zeros(shape, bool)
        values, next_values, log_probs = np.zeros(shape), np.zeros(shape), np.zeros(shape)
        step_stats = {k: np.zeros(shape) for k in ("lin_tracking", "yaw_tracking", "v_error", "w_error")}
        episodes = []

        x, xc = self.norm_obs(self.raw_obs), self.norm_priv(self.raw_priv)
        v = critic(xc)
        for t in range(horizon):
            u, logp = policy.sample(x, rng)
            res = envs.step(u)
            obs[:, t], cobs[:, t], actions[:, t] = x, xc, u
            values[:, t], log_probs[:, t] = v, logp
            raw_rewards[:, t] = res.reward
            rewards[:, t] = self.reward_scaler(res.reward, res.done) if self.normalize_reward else res.reward
            dones[:, t], truncs[:, t] = res.done, res.truncated
            comps = res.info["components"]
            for k in ("lin_tracking", "yaw_tracking"):
                if k in comps:
                    step_stats[k][:, t] = comps[k]
                else:
                    step_stats[k][:, t] = np.nan
            step_stats["v_error"][:, t] = res.info["v_error"]
            step_stats["w_error"][:, t] = res.info["w_error"]

            self._observe_stats(res.obs, res.privileged_obs)
            self.raw_obs, self.raw_priv = res.obs, res.privileged_obs
            x, xc = self.norm_obs(res.obs), self.norm_priv(res.privileged_obs)
            v = critic(xc)
            nv = v.copy()
            if res.done.any():
                idx = np.flatnonzero(res.done)
                nv[idx] = critic(self.norm_priv(res.info["final_priv"][idx]))
                ep = res.info["episodes"]
                for j in range(idx.size):
                    rec = {k: float(ep[k][j]) for k in ep}
                    episodes.append(rec)
                    self.recent_episodes.append(rec)
            next_values[:, t] = nv

        buf = RolloutBuffer(obs, cobs, actions, rewards, dones, truncs, values, log_probs,
                            next_values, raw_rewards=raw_rewards)
        buf.stats = {k: s for k, s in step_stats.items()}
        buf.stats["episodes"] = episodes
        return buf


def collect(collector: Collector, policy, critic, horizon, rng) -> RolloutBuffer:
    return collector.collect(policy, critic, horizon, rng)


def write_rollout_csv(buffer: RolloutBuffer, path):
    """Debug dump, one row per transition.

    Columns: env, t, action_0..k, reward, done, truncated, value, log_prob,
    next_value, advantage, value_target, obs_0..d. Advantage columns are
    empty before ``compute_gae``.
    """
    m = buffer.actions.shape[-1]
    d = buffer.obs.shape[-1]
    header = (["env", "t"] + [f"action_{i}" for i in range(m)]
              + ["reward", "done", "truncated", "value", "log_prob", "next_value",
                 "advantage", "value_target"] + [f"obs_{i}" for i in range(d)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for e in range(buffer.num_envs):
            for t in range(buffer.horizon):
                adv = "" if buffer.advantages is None else repr(float(buffer.advantages[e, t]))
                tgt = "" if buffer.value_targets is None else repr(float(buffer.value_targets[e, t]))
                w.writerow([e, t, *map(repr, buffer.actions[e, t].tolist()),
                            repr(float(buffer.rewards[e, t])), int(buffer.dones[e, t]),
                            int(buffer.truncated[e, t]), repr(float(buffer.values[e, t])),
                            repr(float(buffer.log_probs[e, t])), repr(float(buffer.next_values[e, t])),
                            adv, tgt, *map(repr, buffer.obs[e, t].tolist())])
