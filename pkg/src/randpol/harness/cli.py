"""Command-line entry point: ``randpol {train,eval,compare,count-params,bench}``.

Run directories default to ``$RANDPOL_OUT/<algorithm>_<env>_seed<k>`` (``runs/``
when the variable is unset). Exit status: 0 ok, 1 a run diverged, 2 bad input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .compare import compare, format_report, param_counts
from .config import ConfigError, TrainConfig, parse_overrides
from .experiment import Run, evaluate_policy, output_root

log = logging.getLogger("randpol")


def _config(path, overrides, seed=None, algorithm=None) -> TrainConfig:
    sets = parse_overrides(overrides)
    if seed is not None:
        sets["master_seed"] = str(seed)
    if path:
        return TrainConfig.load(path, sets)
    if algorithm:
        sets.setdefault("algorithm", algorithm)
    return TrainConfig.from_mapping(sets)


def _default_dir(cfg: TrainConfig) -> Path:
    return output_root() / f"{cfg.algorithm}_{cfg.env}_seed{cfg.master_seed}"


def cmd_train(args) -> int:
    cfg = _config(args.config, args.set, args.seed)
    out = Path(args.out_dir) if args.out_dir else _default_dir(cfg)

    def progress(rec):
        if rec["iteration"] % args.log_every == 0:
            log.info("iter %d reward %.4g v_err %.4g learn %.3fs collect %.3fs",
                     rec["iteration"], rec["mean_episode_reward"], rec["v_error"],
                     rec["learn_time"], rec["collect_time"])

    records = Run(cfg).train(out_dir=out, progress=progress)
    print(f"wrote {len(records)} iterations to {out}")
    if records and records[-1]["diverged"]:
        print(f"run diverged at iteration {len(records)}; partial metrics kept", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    expected = _config(args.config, args.set) if args.config or args.set else None
    ck = load_checkpoint(args.checkpoint, expected)
    if args.env and args.env != ck.cfg.env:
        raise CheckpointError(f"checkpoint was trained on {ck.cfg.env!r}, not {args.env!r}")
    report = evaluate_policy(ck.cfg, ck.policy, ck.normalizers, args.episodes, args.seed)
    print(json.dumps(report, indent=2))
    return 0


def cmd_compare(args) -> int:
    configs = list(args.config or [])
    if len(configs) > 2:
        raise ConfigError(["compare takes at most two --config files"])
    cfgs = [_config(p, args.set) for p in configs]
    for alg in ("randpol", "dense_baseline")[len(cfgs):]:
        cfgs.append(_config(None, args.set, algorithm=alg))
    out = Path(args.out_dir) if args.out_dir else output_root() / "compare"
    slots = compare(cfgs[0], cfgs[1], args.seeds, out, args.iterations, args.episodes, args.workers)
    print(format_report(slots), end="")
    print(f"wrote {out}")
    return 1 if any(s.diverged for s in slots) else 0


def cmd_count_params(args) -> int:
    if args.config:
        cfgs = [_config(p, args.set) for p in args.config]
    else:
        cfgs = [_config(None, args.set, algorithm=a) for a in ("randpol", "dense_baseline")]
    counts = []
    for cfg in cfgs:
        c = param_counts(cfg)
        counts.append(c)
        print(f"{cfg.algorithm:15s} env={cfg.env:15s} trainable={c['trainable']:>9d} total={c['total']:>9d}")
    if len(counts) == 2:
        print(f"trainable ratio = {counts[0]['trainable'] / counts[1]['trainable']:.6f}")
    return 0


def bench(cfg: TrainConfig, iterations: int, warmup: int = 1) -> dict:
    """Per-iteration learning and collection time (seconds) over ``iterations``."""
    run = Run(cfg)
    for _ in range(warmup):
        run.step()
    recs = [run.step() for _ in range(iterations)]
    out = {"algorithm": cfg.algorithm, "iterations": iterations}
    for k in ("learn_time", "collect_time"):
        a = np.array([r[k] for r in recs])
        out[k] = float(a.mean())
        out[k + "_rsd"] = float(a.std(ddof=1) / a.mean()) if a.size > 1 else float("nan")
    return out


def cmd_bench(args) -> int:
    cfgs = ([_config(p, args.set, args.seed) for p in args.config] if args.config else
            [_config(None, args.set, args.seed, a) for a in ("randpol", "dense_baseline")])
    for cfg in cfgs:
        r = bench(cfg, args.iterations)
        print(f"{cfg.algorithm:15s} learn {r['learn_time']:.4f} s/iter (rsd {r['learn_time_rsd']:.1%})  "
              f"collect {r['collect_time']:.4f} s/iter (rsd {r['collect_time_rsd']:.1%})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="randpol", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi_config=False):
        if multi_config:
            sp.add_argument("--config", action="append", help="config file (repeatable)")
        else:
            sp.add_argument("--config", help="config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field (repeatable)")

    sp = sub.add_parser("train", help="train one run")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-dir")
    sp.add_argument("--log-every", type=int, default=10)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--env")
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="multi-seed comparison of two configs")
    common(sp, multi_config=True)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("count-params", help="trainable and total parameter counts")
    common(sp, multi_config=True)
    sp.set_defaults(func=cmd_count_params)

    sp = sub.add_parser("bench", help="time learning and collection per iteration")
    common(sp, multi_config=True)
    sp.add_argument("--iterations", type=int, default=100)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
