"""Build a training run from a TrainConfig, iterate it, evaluate it."""
from __future__ import annotations

import csv
import logging
import math
import os
from pathlib import Path

import numpy as np

from ..actor_critic import build_dense, build_randpol
from ..envs import CurriculumState, PendulumConfig, VelocityEnvConfig, make_env
from ..learner import Learner, train_iteration
from ..rollout import Collector
from .config import TrainConfig, seed_sequence, stream_rng, stream_seed64
from .timing import Timer

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "iteration", "mean_episode_reward", "mean_episode_length", "episodes_completed",
    "mean_step_reward", "lin_tracking", "yaw_tracking", "v_error", "w_error",
    "value_loss", "surrogate_loss", "entropy", "kl", "clip_fraction",
    "actor_grad_norm", "critic_grad_norm", "learning_rate", "log_std_mean",
    "cmd_v_max", "cmd_w_max", "diverged", "learn_time", "collect_time",
)
TIMING_COLUMNS = ("learn_time", "collect_time")


def output_root() -> Path:
    return Path(os.environ.get("RANDPOL_OUT", "runs"))


def env_kwargs(cfg: TrainConfig, evaluation=False) -> dict:
    if cfg.env == "pendulum":
        return {"cfg": PendulumConfig(max_torque=cfg.pendulum_max_torque,
                                      episode_len=cfg.pendulum_episode_len),
                "stagger": not evaluation}
    vcfg = VelocityEnvConfig(
        dt=cfg.env_dt, episode_len=cfg.episode_len, resample_period=cfg.resample_period,
        k_v=cfg.k_v, d_v=cfg.d_v, k_w=cfg.k_w, d_w=cfg.d_w, dr_low=cfg.dr_low,
        dr_high=cfg.dr_high, push_prob=cfg.push_prob, push_max=cfg.push_max,
        w_lin=cfg.w_lin, w_yaw=cfg.w_yaw, sigma_v=cfg.sigma_v, sigma_w=cfg.sigma_w,
        w_act=cfg.w_act, w_rate=cfg.w_rate)
    curriculum = CurriculumState(promotion_threshold=cfg.curriculum_threshold,
                                 expansion_step=cfg.curriculum_step)
    if evaluation or not cfg.curriculum:
        curriculum = CurriculumState.full(promotion_threshold=cfg.curriculum_threshold,
                                          expansion_step=cfg.curriculum_step)
    return {"cfg": vcfg, "curriculum": curriculum, "pushes": not evaluation,
            "curriculum_enabled": cfg.curriculum and not evaluation, "stagger": not evaluation}


def build_models(cfg: TrainConfig, obs_dim, critic_obs_dim, action_dim):
    """Actor and critic for ``cfg.algorithm`` with seeds fanned out from master_seed."""
    bounds = (cfg.log_std_min, cfg.log_std_max)
    if cfg.algorithm == "randpol":
        return build_randpol(
            obs_dim, critic_obs_dim, action_dim,
            stream_seed64(cfg.master_seed, "actor_basis"),
            stream_seed64(cfg.master_seed, "critic_basis"),
            cfg.basis_hidden, cfg.feature_dim, cfg.log_std_init, bounds)
    return build_dense(
        obs_dim, critic_obs_dim, action_dim,
        stream_rng(cfg.master_seed, "actor_init"), stream_rng(cfg.master_seed, "critic_init"),
        cfg.dense_hidden, cfg.log_std_init, bounds)


def _nanmean(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0 or np.all(np.isnan(a)):
        return float("nan")
    return float(np.nanmean(a))


class Run:
    """One seeded training run: environments, models, normalizers, optimizer."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg.validate()
        self.envs = make_env(cfg.env, cfg.num_envs, seed_for(cfg, "env"), **env_kwargs(cfg))
        self.policy, self.critic = build_models(
            cfg, self.envs.obs_dim, self.envs.privileged_dim, self.envs.action_dim)
        self.collector = Collector(self.envs, cfg.gamma, cfg.normalize_obs, cfg.normalize_reward,
                                   cfg.obs_clip)
        self.learner = Learner(self.policy, self.critic, cfg)
        self.sampling_rng = stream_rng(cfg.master_seed, "sampling")
        self.minibatch_rng = stream_rng(cfg.master_seed, "minibatch")
        self.timer = Timer()
        self.iteration = 0
        self.records: list[dict] = []

    def frozen_checksums(self) -> dict[str, str]:
        out = {}
        for role, head in (("actor", self.policy), ("critic", self.critic)):
            if hasattr(head.net, "basis"):
                out[role] = head.net.basis.checksum()
        return out

    def step(self) -> dict:
        report = train_iteration(self.policy, self.critic, self.collector, self.learner, self.cfg,
                                 self.sampling_rng, self.minibatch_rng, self.timer)
        self.iteration += 1
        buf = report.rollout
        recent = list(self.collector.recent_episodes)
        cur = getattr(self.envs, "curriculum", None)
        rec = {
            "iteration": self.iteration,
            "mean_episode_reward": _nanmean([e["reward"] for e in recent]),
            "mean_episode_length": _nanmean([e["length"] for e in recent]),
            "episodes_completed": len(buf.stats["episodes"]),
            "mean_step_reward": float(buf.raw_rewards.mean()),
            "lin_tracking": _nanmean(buf.stats["lin_tracking"]),
            "yaw_tracking": _nanmean(buf.stats["yaw_tracking"]),
            "v_error": _nanmean(buf.stats["v_error"]),
            "w_error": _nanmean(buf.stats["w_error"]),
            "value_loss": report.value_loss,
            "surrogate_loss": report.surrogate_loss,
            "entropy": report.entropy,
            "kl": report.kl,
            "clip_fraction": report.clip_fraction,
            "actor_grad_norm": report.actor_grad_norm,
            "critic_grad_norm": report.critic_grad_norm,
            "learning_rate": report.learning_rate,
            "log_std_mean": float(self.policy.log_std.mean()),
            "cmd_v_max": cur.v_range[1] if cur is not None else float("nan"),
            "cmd_w_max": cur.w_range[1] if cur is not None else float("nan"),
            "diverged": int(report.diverged),
            "learn_time": report.learn_time,
            "collect_time": report.collect_time,
        }
        self.records.append(rec)
        if report.diverged:
            log.warning("iteration %d diverged: %s", self.iteration, report.message)
        return rec

    def train(self, iterations=None, out_dir=None, checkpoint_every=None, progress=None) -> list[dict]:
        """Run the iteration budget, streaming metrics.csv and checkpoints into out_dir.

        Stops early (keeping everything written so far) if an iteration diverges.
        """
        from .checkpoint import save_checkpoint

        iterations = self.cfg.iterations if iterations is None else iterations
        every = self.cfg.checkpoint_every if checkpoint_every is None else checkpoint_every
        writer = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            self.cfg.save(out_dir / "config.ini")
            writer = MetricsWriter(out_dir / "metrics.csv")
        try:
            for _ in range(iterations):
                rec = self.step()
                if writer:
                    writer.write(rec)
                if progress:
                    progress(rec)
                if out_dir is not None and every and self.iteration % every == 0:
                    save_checkpoint(self, out_dir / f"checkpoint_{self.iteration:06d}.rpck")
                if rec["diverged"]:
                    break
        finally:
            if writer:
                writer.close()
        if out_dir is not None:
            save_checkpoint(self, out_dir / "checkpoint_final.rpck")
        return self.records

    def evaluate(self, episodes=None, seed=None) -> dict:
        return evaluate_policy(self.cfg, self.policy, self.collector.normalizers(), episodes, seed)


def seed_for(cfg: TrainConfig, stream: str):
    return seed_sequence(cfg.master_seed, stream)


def evaluate_policy(cfg: TrainConfig, policy, normalizers, episodes=None, seed=None) -> dict:
    """Deterministic evaluation with the policy mean and frozen normalizers.

    Runs ``episodes`` full-length episodes in parallel (one per env) without
    pushes. Velocity commands are drawn from the final command ranges, so
    scores are comparable between an untrained and a trained policy.
    """
    episodes = cfg.eval_envs if episodes is None else int(episodes)
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    ss = seed_for(cfg, "eval_env") if seed is None else np.random.SeedSequence(seed)
    envs = make_env(cfg.env, episodes, ss, **env_kwargs(cfg, evaluation=True))
    obs_rms = normalizers["obs"]

    def norm(o):
        return obs_rms.normalize(o, clip=cfg.obs_clip) if cfg.normalize_obs else o

    obs, _ = envs.reset()
    length = envs.cfg.episode_len
    totals = np.zeros(episodes)
    sums = {k: np.zeros(episodes) for k in ("lin_tracking", "yaw_tracking", "v_error", "w_error")}
    for _ in range(length):
        res = envs.step(policy.mean(norm(obs)))
        totals += res.reward
        comps = res.info["components"]
        for k in ("lin_tracking", "yaw_tracking"):
            sums[k] += comps.get(k, np.nan)
        sums["v_error"] += res.info["v_error"]
        sums["w_error"] += res.info["w_error"]
        obs = res.obs
    report = {
        "episodes": episodes,
        "mean_episode_reward": float(totals.mean()),
        "lin_tracking": float(np.mean(sums["lin_tracking"] / length)),
        "yaw_tracking": float(np.mean(sums["yaw_tracking"] / length)),
        "v_error": float(np.mean(sums["v_error"] / length)),
        "w_error": float(np.mean(sums["w_error"] / length)),
    }
    return report


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


class MetricsWriter:
    """Append-only metrics CSV with a fixed header; flushed per record."""

    def __init__(self, path, columns=METRIC_COLUMNS):
        self.columns = columns
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(columns)
        self.fh.flush()

    def write(self, rec: dict):
        self.writer.writerow([_fmt(rec[c]) for c in self.columns])
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def strip_timing(path) -> bytes:
    """Metrics CSV bytes with the timing columns removed (for determinism checks)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [i for i, c in enumerate(rows[0]) if c not in TIMING_COLUMNS]
    return "\n".join(",".join(r[i] for i in keep) for r in rows).encode()
