"""Desk-scale vectorized control tasks.

``VelocityTrackEnv`` is a planar body-velocity tracking task: a first-order
body with per-episode randomized gains and damping must follow a forward
speed / yaw-rate command that is resampled mid-episode and whose range grows
under a promotion curriculum. ``PendulumEnv`` is the classic swing-up task.

Both expose the same batch interface: ``reset()`` returns
``(obs, privileged_obs)`` and ``step(actions)`` returns a ``StepResult``.
Environments auto-reset; ``info["final_obs"]`` / ``info["final_priv"]`` hold
the pre-reset observation of every env so truncated episodes can be
bootstrapped.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class EnvStepError(RuntimeError):
    def __init__(self, env_index, message):
        super().__init__(f"env {env_index}: {message}")
        self.env_index = env_index


class StepResult(NamedTuple):
    obs: np.ndarray
    privileged_obs: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    truncated: np.ndarray
    info: dict


def _env_rngs(seed, num_envs):
    # child i depends only on (seed, i): adding envs leaves existing streams alone
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=(*ss.spawn_key, i)))
            for i in range(num_envs)]


def _check_actions(actions, num_envs, action_dim):
    a = np.asarray(actions, dtype=np.float64).reshape(num_envs, action_dim)
    bad = ~np.isfinite(a).all(axis=1)
    if bad.any():
        raise EnvStepError(int(np.flatnonzero(bad)[0]), "non-finite action")
    return a


# --------------------------------------------------------------------------
# velocity tracking

@dataclass(frozen=True)
class Command:
    v_cmd: float
    w_cmd: float


@dataclass(frozen=True)
class CurriculumState:
    v_range: tuple[float, float] = (0.0, 0.2)
    w_range: tuple[float, float] = (-0.2, 0.2)
    promotion_threshold: float = 0.8
    expansion_step: float = 0.1
    v_max: float = 1.0
    w_max: float = 1.0

    @property
    def at_max(self) -> bool:
        return self.v_range[1] >= self.v_max and self.w_range[1] >= self.w_max

    @classmethod
    def full(cls, **kw) -> "CurriculumState":
        c = cls(**kw)
        return dataclasses.replace(c, v_range=(0.0, c.v_max), w_range=(-c.w_max, c.w_max))


def curriculum_update(cs: CurriculumState, episode_tracking_score: float) -> CurriculumState:
    """Widen the command ranges by one step if the score clears the threshold."""
    if not math.isfinite(episode_tracking_score):
        raise ValueError("tracking score must be finite")
    if episode_tracking_score < cs.promotion_threshold or cs.at_max:
        return cs
    # rounding stops float drift (0.2 + 8 * 0.1 must land on 1.0, not 0.9999...)
    v_hi = min(round(cs.v_range[1] + cs.expansion_step, 12), cs.v_max)
    w_hi = min(round(cs.w_range[1] + cs.expansion_step, 12), cs.w_max)
    return dataclasses.replace(cs, v_range=(cs.v_range[0], v_hi), w_range=(-w_hi, w_hi))


@dataclass(frozen=True)
class VelocityEnvConfig:
    dt: float = 0.05                 # s
    episode_len: int = 400           # steps (20 s)
    resample_period: int = 200       # steps (10 s)
    k_v: float = 3.0                 # (m/s^2) per unit effort
    d_v: float = 2.0                 # 1/s
    k_w: float = 3.0                 # (rad/s^2) per unit effort
    d_w: float = 2.0                 # 1/s
    dr_low: float = 0.8              # randomization factor bounds for k and d
    dr_high: float = 1.2
    push_prob: float = 0.005         # per env per step
    push_max: float = 0.3            # m/s (and rad/s) impulse bound
    v_max_phys: float = 2.0          # m/s
    w_max_phys: float = 2.0          # rad/s
    init_speed: float = 0.1          # |v|,|w| bound at reset
    w_lin: float = 1.0
    w_yaw: float = 0.5
    sigma_v: float = 0.25
    sigma_w: float = 0.25
    w_act: float = 0.01
    w_rate: float = 0.01


def reward_of(v, w, v_cmd, w_cmd, action, prev_action, cfg: VelocityEnvConfig = VelocityEnvConfig()):
    """Tracking kernels minus effort and effort-rate penalties.

    Works elementwise over env batches; returns ``(reward, components)``.
    """
    action = np.asarray(action, dtype=np.float64)
    prev_action = np.asarray(prev_action, dtype=np.float64)
    comps = {
        "lin_tracking": cfg.w_lin * np.exp(-((np.asarray(v) - v_cmd) ** 2) / cfg.sigma_v ** 2),
        "yaw_tracking": cfg.w_yaw * np.exp(-((np.asarray(w) - w_cmd) ** 2) / cfg.sigma_w ** 2),
        "action": -cfg.w_act * np.sum(action ** 2, axis=-1),
        "action_rate": -cfg.w_rate * np.sum((action - prev_action) ** 2, axis=-1),
    }
    reward = comps["lin_tracking"] + comps["yaw_tracking"] + comps["action"] + comps["action_rate"]
    return reward, comps


_EPISODE_KEYS = ("reward", "lin_tracking", "yaw_tracking", "v_error", "w_error", "length")


class VelocityTrackEnv:
    """Batch of independent velocity-tracking bodies.

    Observation (8): v, w, sin(heading), cos(heading), v_cmd, w_cmd, prev action (2).
    Privileged (12): observation followed by the episode's k_v, d_v, k_w, d_w.

    Each env draws from its own generator, so the batch is a pure function of
    (seed, action sequence). With ``stagger=True`` the first episode of each
    env starts at a random step count so episode ends spread over time.
    """

    obs_dim = 8
    privileged_dim = 12
    action_dim = 2

    def __init__(self, num_envs=64, seed=0, cfg: VelocityEnvConfig | None = None,
                 curriculum: CurriculumState | None = None, pushes=True,
                 curriculum_enabled=True, stagger=True):
        self.num_envs = int(num_envs)
        if self.num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        self.cfg = cfg or VelocityEnvConfig()
        self.curriculum = curriculum or CurriculumState()
        self.pushes = pushes
        self.curriculum_enabled = curriculum_enabled
        self.stagger = stagger
        self.rngs = _env_rngs(seed, self.num_envs)
        n = self.num_envs
        self.v = np.zeros(n)
        self.w = np.zeros(n)
        self.heading = np.zeros(n)
        self.prev_action = np.zeros((n, 2))
        self.dyn = np.zeros((n, 4))  # k_v, d_v, k_w, d_w
        self.cmd = np.zeros((n, 2))
        self.step_count = np.zeros(n, dtype=np.int64)
        self._ep = {k: np.zeros(n) for k in _EPISODE_KEYS}
        self._pending_scores: list[float] = []

    # -- state construction

    def _sample_command(self, i):
        lo_v, hi_v = self.curriculum.v_range
        lo_w, hi_w = self.curriculum.w_range
        r = self.rngs[i].random(2)
        self.cmd[i] = (lo_v + (hi_v - lo_v) * r[0], lo_w + (hi_w - lo_w) * r[1])

    def _reset_env(self, i):
        c = self.cfg
        rng = self.rngs[i]
        s = rng.uniform(-c.init_speed, c.init_speed, size=2)
        self.v[i], self.w[i] = s
        self.heading[i] = rng.uniform(-np.pi, np.pi)
        f = rng.uniform(c.dr_low, c.dr_high, size=4)
        self.dyn[i] = f * (c.k_v, c.d_v, c.k_w, c.d_w)
        self.prev_action[i] = 0.0
        self.step_count[i] = 0
        self._sample_command(i)
        for k in _EPISODE_KEYS:
            self._ep[k][i] = 0.0

    def _observe(self):
        obs = np.column_stack([self.v, self.w, np.sin(self.heading), np.cos(self.heading),
                               self.cmd, self.prev_action])
        return obs, np.column_stack([obs, self.dyn])

    def reset(self):
        for i in range(self.num_envs):
            self._reset_env(i)
            if self.stagger:
                self.step_count[i] = self.rngs[i].integers(0, self.cfg.episode_len)
        return self._observe()

    @property
    def commands(self) -> list[Command]:
        return [Command(float(a), float(b)) for a, b in self.cmd]

    # -- dynamics

    def step(self, actions) -> StepResult:
        c = self.cfg
        n = self.num_envs
        a = np.clip(_check_actions(actions, n, 2), -1.0, 1.0)
        push = np.zeros((n, 2))
        if self.pushes and c.push_prob > 0:
            for i in range(n):
                r = self.rngs[i].random(3)
                if r[0] < c.push_prob:
                    push[i] = c.push_max * (2.0 * r[1:] - 1.0)
        k_v, d_v, k_w, d_w = self.dyn.T
        self.v = np.clip(self.v + c.dt * (k_v * a[:, 0] - d_v * self.v) + push[:, 0],
                         -c.v_max_phys, c.v_max_phys)
        self.w = np.clip(self.w + c.dt * (k_w * a[:, 1] - d_w * self.w) + push[:, 1],
                         -c.w_max_phys, c.w_max_phys)
        self.heading = np.angle(np.exp(1j * (self.heading + c.dt * self.w)))

        reward, comps = reward_of(self.v, self.w, self.cmd[:, 0], self.cmd[:, 1], a, self.prev_action, c)
        v_err = np.abs(self.v - self.cmd[:, 0])
        w_err = np.abs(self.w - self.cmd[:, 1])
        self.prev_action = a
        self.step_count += 1
        ep = self._ep
        ep["reward"] += reward
        ep["lin_tracking"] += comps["lin_tracking"]
        ep["yaw_tracking"] += comps["yaw_tracking"]
        ep["v_error"] += v_err
        ep["w_error"] += w_err
        ep["length"] += 1

        done = self.step_count >= c.episode_len
        truncated = done.copy()  # time limit is the only termination
        final_obs, final_priv = self._observe()

        finished = np.flatnonzero(done)
        episodes = {k: ep[k][finished].copy() for k in _EPISODE_KEYS}
        for i in range(n):
            if done[i]:
                self._reset_env(i)
            elif self.step_count[i] % c.resample_period == 0:
                self._sample_command(i)
        if finished.size and self.curriculum_enabled:
            # linear-tracking kernel averaged over each finished episode
            scores = episodes["lin_tracking"] / (c.w_lin * episodes["length"])
            self._record_scores(scores)
        obs, priv = self._observe()
        info = {
            "components": comps,
            "v_error": v_err,
            "w_error": w_err,
            "final_obs": final_obs,
            "final_priv": final_priv,
            "episodes": episodes,
        }
        return StepResult(obs, priv, reward, done, truncated, info)

    def _record_scores(self, scores):
        self._pending_scores.extend(float(s) for s in scores)
        # one promotion decision per batch-worth of finished episodes
        while len(self._pending_scores) >= self.num_envs:
            chunk = self._pending_scores[:self.num_envs]
            del self._pending_scores[:self.num_envs]
            self.curriculum = curriculum_update(self.curriculum, float(np.mean(chunk)))


# --------------------------------------------------------------------------
# pendulum

@dataclass(frozen=True)
class PendulumConfig:
    dt: float = 0.05          # s
    g: float = 10.0           # m/s^2
    m: float = 1.0            # kg
    length: float = 1.0       # m
    max_torque: float = 2.0   # N m, applied as max_torque * clip(action, -1, 1)
    max_speed: float = 8.0    # rad/s
    episode_len: int = 200


def angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


def pendulum_dynamics(theta, omega, torque, cfg: PendulumConfig = PendulumConfig()):
    """One semi-implicit Euler step; theta = 0 is upright."""
    c = cfg
    omega = omega + (3.0 * c.g / (2.0 * c.length) * np.sin(theta)
                     + 3.0 / (c.m * c.length ** 2) * torque) * c.dt
    omega = np.clip(omega, -c.max_speed, c.max_speed)
    theta = theta + omega * c.dt
    return theta, omega


def pendulum_energy(theta, omega, cfg: PendulumConfig = PendulumConfig()):
    """Conserved quantity of the unactuated rod, per unit of m l^2 / 3."""
    return 0.5 * omega ** 2 + 3.0 * cfg.g / (2.0 * cfg.length) * np.cos(theta)


def pendulum_reward(theta, omega, torque):
    return -(angle_normalize(theta) ** 2 + 0.1 * omega ** 2 + 0.001 * torque ** 2)


class PendulumEnv:
    """Swing-up batch. Observation [cos, sin, omega]; privileged is the same."""

    obs_dim = 3
    privileged_dim = 3
    action_dim = 1

    def __init__(self, num_envs=64, seed=0, cfg: PendulumConfig | None = None, stagger=True, **_):
        self.num_envs = int(num_envs)
        if self.num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        self.cfg = cfg or PendulumConfig()
        self.stagger = stagger
        self.rngs = _env_rngs(seed, self.num_envs)
        n = self.num_envs
        self.theta = np.zeros(n)
        self.omega = np.zeros(n)
        self.step_count = np.zeros(n, dtype=np.int64)
        self._ep_reward = np.zeros(n)
        self._ep_len = np.zeros(n)

    def _reset_env(self, i):
        rng = self.rngs[i]
        self.theta[i] = rng.uniform(-np.pi, np.pi)
        self.omega[i] = rng.uniform(-1.0, 1.0)
        self.step_count[i] = 0
        self._ep_reward[i] = 0.0
        self._ep_len[i] = 0.0

    def _observe(self):
        obs = np.column_stack([np.cos(self.theta), np.sin(self.theta), self.omega])
        return obs, obs.copy()

    def reset(self):
        for i in range(self.num_envs):
            self._reset_env(i)
            if self.stagger:
                self.step_count[i] = self.rngs[i].integers(0, self.cfg.episode_len)
        return self._observe()

    def step(self, actions) -> StepResult:
        c = self.cfg
        a = _check_actions(actions, self.num_envs, 1)[:, 0]
        torque = c.max_torque * np.clip(a, -1.0, 1.0)
        reward = pendulum_reward(self.theta, self.omega, torque)
        comps = {
            "angle": -angle_normalize(self.theta) ** 2,
            "velocity": -0.1 * self.omega ** 2,
            "torque": -0.001 * torque ** 2,
        }
        self.theta, self.omega = pendulum_dynamics(self.theta, self.omega, torque, c)
        self.step_count += 1
        self._ep_reward += reward
        self._ep_len += 1
        done = self.step_count >= c.episode_len
        truncated = done.copy()
        final_obs, final_priv = self._observe()
        finished = np.flatnonzero(done)
        nan = np.full(finished.size, np.nan)
        episodes = {"reward": self._ep_reward[finished].copy(), "lin_tracking": nan,
                    "yaw_tracking": nan, "v_error": nan, "w_error": nan,
                    "length": self._ep_len[finished].copy()}
        for i in finished:
            self._reset_env(i)
        obs, priv = self._observe()
        nan_n = np.full(self.num_envs, np.nan)
        info = {"components": comps, "v_error": nan_n, "w_error": nan_n,
                "final_obs": final_obs, "final_priv": final_priv, "episodes": episodes}
        return StepResult(obs, priv, reward, done, truncated, info)


ENVIRONMENTS = {"velocity_track": VelocityTrackEnv, "pendulum": PendulumEnv}


def make_env(name, num_envs, seed, **kwargs):
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(num_envs=num_envs, seed=seed, **kwargs)
