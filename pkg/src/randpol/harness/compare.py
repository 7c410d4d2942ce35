"""Multi-seed comparison of two configurations.

Outputs written to ``out_dir``:

    compare.csv  one row per (slot, metric): n, mean, half_width, ci_low,
                 ci_high, and the per-seed values joined by ``;``
    compare.txt  the same numbers as a text table, plus parameter counts,
                 learning time per iteration and any diverged seeds
    curves.csv   long-form per-iteration records: slot, seed, then the
                 training metric columns (for plotting learning curves)
    <slot>/seed_<k>/  the individual run directories (config, metrics, checkpoints)

Intervals are two-sided Student-t intervals over seeds:
mean +- t_{0.975, n-1} * s / sqrt(n), with s the sample (ddof=1) std.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from ..function_approx import count_total, count_trainable
from .config import TrainConfig
from .experiment import METRIC_COLUMNS, Run, build_models

EVAL_METRICS = ("mean_episode_reward", "lin_tracking", "yaw_tracking", "v_error", "w_error")
TIME_METRICS = ("learn_time", "collect_time")
CURVE_COLUMNS = ("slot", "seed") + METRIC_COLUMNS


def t_interval(values, confidence=0.95):
    """(mean, half_width) of the two-sided t-interval; needs >= 2 finite values."""
    a = np.asarray(values, dtype=np.float64)
    if a.size < 2:
        raise ValueError("a confidence interval needs at least 2 values")
    mean = float(a.mean())
    if not np.all(np.isfinite(a)):
        return mean, float("nan")
    sem = float(a.std(ddof=1)) / math.sqrt(a.size)
    return mean, float(stats.t.ppf(0.5 + confidence / 2.0, a.size - 1)) * sem


def param_counts(cfg: TrainConfig) -> dict:
    from ..envs import ENVIRONMENTS

    env = ENVIRONMENTS[cfg.env]
    policy, critic = build_models(cfg, env.obs_dim, env.privileged_dim, env.action_dim)
    return {"trainable": count_trainable(policy, critic), "total": count_total(policy, critic)}


@dataclass
class SeedResult:
    seed: int
    iterations: int
    diverged: bool
    eval: dict
    learn_time: float
    collect_time: float
    records: list = field(repr=False, default_factory=list)


def run_seed(cfg: TrainConfig, seed: int, out_dir=None, iterations=None, eval_episodes=None) -> SeedResult:
    """Train one seed to completion (or divergence) and evaluate the final policy."""
    run = Run(cfg.replace(master_seed=int(seed)))
    records = run.train(iterations, out_dir)
    report = run.evaluate(eval_episodes)
    learn = [r["learn_time"] for r in records]
    collect = [r["collect_time"] for r in records]
    return SeedResult(int(seed), len(records), any(r["diverged"] for r in records), report,
                      float(np.mean(learn)), float(np.mean(collect)), records)


def _run_job(job):
    return run_seed(*job)


@dataclass
class SlotSummary:
    label: str
    cfg: TrainConfig
    results: list
    params: dict

    @property
    def seeds(self):
        return [r.seed for r in self.results]

    def values(self, metric):
        if metric in TIME_METRICS:
            return [getattr(r, metric) for r in self.results]
        return [r.eval[metric] for r in self.results]

    def aggregate(self) -> dict:
        return {m: t_interval(self.values(m)) for m in EVAL_METRICS + TIME_METRICS}

    @property
    def diverged(self):
        return [r.seed for r in self.results if r.diverged]


def _labels(a: TrainConfig, b: TrainConfig):
    if a.algorithm != b.algorithm:
        return a.algorithm, b.algorithm
    return f"{a.algorithm}_a", f"{b.algorithm}_b"


def compare(cfg_a: TrainConfig, cfg_b: TrainConfig, seeds, out_dir=None, iterations=None,
            eval_episodes=None, workers=1) -> list[SlotSummary]:
    """Train both configs on every seed, aggregate, and write the report files."""
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError("compare needs at least 2 seeds")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    labels = _labels(cfg_a, cfg_b)
    out_dir = Path(out_dir) if out_dir is not None else None
    jobs = []
    for label, cfg in zip(labels, (cfg_a, cfg_b)):
        for s in seeds:
            run_dir = out_dir / label / f"seed_{s}" if out_dir is not None else None
            jobs.append((cfg, s, run_dir, iterations, eval_episodes))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    n = len(seeds)
    slots = [SlotSummary(label, cfg, results[i * n:(i + 1) * n], param_counts(cfg))
             for i, (label, cfg) in enumerate(zip(labels, (cfg_a, cfg_b)))]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_compare_csv(slots, out_dir / "compare.csv")
        (out_dir / "compare.txt").write_text(format_report(slots))
        write_curves(slots, out_dir / "curves.csv")
    return slots


def write_compare_csv(slots, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "metric", "n", "mean", "half_width", "ci_low", "ci_high", "values"])
        for slot in slots:
            for metric, (mean, hw) in slot.aggregate().items():
                vals = slot.values(metric)
                w.writerow([slot.label, metric, len(vals), repr(mean), repr(hw), repr(mean - hw),
                            repr(mean + hw), ";".join(repr(float(v)) for v in vals)])
            for kind in ("trainable", "total"):
                v = slot.params[kind]
                w.writerow([slot.label, f"params_{kind}", 1, v, 0, v, v, v])


def write_curves(slots, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for slot in slots:
            for r in slot.results:
                for rec in r.records:
                    w.writerow([slot.label, r.seed] + [rec[c] for c in METRIC_COLUMNS])


def format_report(slots) -> str:
    n = len(slots[0].results)
    lines = [f"mean +- 95% t-interval over {n} seeds (evaluation: deterministic policy mean)", ""]
    width = max(len(s.label) for s in slots) + 2
    header = "metric".ljust(22) + "".join(s.label.rjust(width + 22) for s in slots)
    lines.append(header)
    aggs = [s.aggregate() for s in slots]
    for metric in EVAL_METRICS + TIME_METRICS:
        unit = " [s]" if metric in TIME_METRICS else ""
        row = (metric + unit).ljust(22)
        for agg in aggs:
            mean, hw = agg[metric]
            row += f"{mean:.6g} +- {hw:.3g}".rjust(width + 22)
        lines.append(row)
    lines.append("")
    for kind in ("trainable", "total"):
        row = f"params_{kind}".ljust(22)
        for s in slots:
            row += str(s.params[kind]).rjust(width + 22)
        lines.append(row)
    a, b = slots
    lines.append(f"trainable ratio {a.label}/{b.label} = {a.params['trainable'] / b.params['trainable']:.6f}")
    lines.append("")
    for s in slots:
        if s.diverged:
            lines.append(f"DIVERGED {s.label}: seeds {s.diverged}")
        else:
            lines.append(f"{s.label}: no diverged seeds")
    return "\n".join(lines) + "\n"
