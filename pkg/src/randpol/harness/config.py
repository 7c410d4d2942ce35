"""Typed, flat key-value training configuration.

Files are INI text with a single ``[train]`` section::

    [train]
    algorithm = randpol
    # learning rate [1]
    lr = 0.0003

Unknown keys are rejected. Values not given in the file fall back to the
algorithm's defaults, so the file only needs ``algorithm`` to be valid.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

ALGORITHMS = ("randpol", "dense_baseline")
ENVS = ("velocity_track", "pendulum")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  {p}" for p in self.problems))


def _f(default, unit="", doc="", check=None, **kw):
    return field(default=default, metadata={"unit": unit, "doc": doc, "check": check}, **kw)


_pos = (lambda v: v > 0, "must be > 0")
_nonneg = (lambda v: v >= 0, "must be >= 0")
_unit_open = (lambda v: 0 < v < 1, "must lie in (0, 1)")
_unit_closed = (lambda v: 0 <= v <= 1, "must lie in [0, 1]")
_widths = (lambda v: len(v) > 0 and all(w >= 1 for w in v), "must be a non-empty list of widths >= 1")


@dataclass
class TrainConfig:
    algorithm: str = _f("randpol", doc="randpol | dense_baseline",
                        check=(lambda v: v in ALGORITHMS, f"must be one of {ALGORITHMS}"))
    env: str = _f("velocity_track", doc="velocity_track | pendulum",
                  check=(lambda v: v in ENVS, f"must be one of {ENVS}"))
    num_envs: int = _f(64, "envs", check=_pos)
    horizon: int = _f(50, "steps", "environment steps per env per iteration", _pos)
    iterations: int = _f(1000, "iterations", check=_pos)
    gamma: float = _f(0.99, "1", "discount factor", _unit_open)
    lam: float = _f(0.95, "1", "GAE lambda", _unit_closed)
    epochs: int = _f(5, "epochs", check=_pos)
    minibatches: int = _f(4, "minibatches", check=_pos)
    clip_epsilon: float = _f(0.2, "1", "surrogate clipping parameter", _pos)
    entropy_coef: float = _f(0.01, "1", check=_nonneg)
    lr: float = _f(3e-4, "1", "Adam learning rate (actor and critic)", _pos)
    grad_clip: float = _f(0.5, "1", "max global gradient L2 norm", _pos)
    kl_adaptive: bool = _f(False, doc="KL-adaptive learning rate")
    kl_target: float = _f(0.01, "nats", check=_pos)
    basis_hidden: tuple = _f((500,), "units", "frozen hidden widths", _widths)
    feature_dim: int = _f(400, "features", "random feature dimension", _pos)
    dense_hidden: tuple = _f((512, 256, 128), "units", "dense baseline hidden widths", _widths)
    log_std_init: float = _f(0.0, "log(action unit)")
    log_std_min: float = _f(-5.0, "log(action unit)")
    log_std_max: float = _f(2.0, "log(action unit)")
    normalize_obs: bool = _f(True)
    normalize_reward: bool = _f(True)
    normalize_advantages: bool = _f(True)
    obs_clip: float = _f(10.0, "std", check=_pos)
    master_seed: int = _f(0, check=(lambda v: 0 <= v < 2 ** 63, "must be in [0, 2^63)"))
    checkpoint_every: int = _f(100, "iterations", "0 = only at the end", _nonneg)
    eval_envs: int = _f(16, "episodes", "episodes per evaluation", _pos)
    # velocity-tracking task
    env_dt: float = _f(0.05, "s", check=_pos)
    episode_len: int = _f(400, "steps", check=_pos)
    resample_period: int = _f(200, "steps", check=_pos)
    k_v: float = _f(3.0, "m/s^2", "nominal forward gain", _pos)
    d_v: float = _f(2.0, "1/s", "nominal forward damping", _pos)
    k_w: float = _f(3.0, "rad/s^2", "nominal yaw gain", _pos)
    d_w: float = _f(2.0, "1/s", "nominal yaw damping", _pos)
    dr_low: float = _f(0.8, "1", "lower randomization factor for gains/damping", _pos)
    dr_high: float = _f(1.2, "1", "upper randomization factor", _pos)
    push_prob: float = _f(0.005, "1/step", check=_unit_closed)
    push_max: float = _f(0.3, "m/s", check=_nonneg)
    w_lin: float = _f(1.0, "1", check=_nonneg)
    w_yaw: float = _f(0.5, "1", check=_nonneg)
    sigma_v: float = _f(0.25, "m/s", check=_pos)
    sigma_w: float = _f(0.25, "rad/s", check=_pos)
    w_act: float = _f(0.01, "1", check=_nonneg)
    w_rate: float = _f(0.01, "1", check=_nonneg)
    curriculum: bool = _f(True)
    curriculum_threshold: float = _f(0.8, "1", "mean linear-tracking kernel needed to promote", _unit_closed)
    curriculum_step: float = _f(0.1, "m/s | rad/s", check=_pos)
    # pendulum task
    pendulum_max_torque: float = _f(2.0, "N m", check=_pos)
    pendulum_episode_len: int = _f(200, "steps", check=_pos)

    def __post_init__(self):
        self.basis_hidden = tuple(int(w) for w in self.basis_hidden)
        self.dense_hidden = tuple(int(w) for w in self.dense_hidden)

    @classmethod
    def defaults(cls, algorithm="randpol", **overrides) -> "TrainConfig":
        base = dict(ALGORITHM_DEFAULTS.get(algorithm, {}))
        base.update(overrides)
        cfg = cls(algorithm=algorithm, **base)
        cfg.validate()
        return cfg

    def validate(self):
        problems = []
        for f in fields(self):
            check = f.metadata.get("check")
            v = getattr(self, f.name)
            if check and not check[0](v):
                problems.append(f"{f.name} = {v!r}: {check[1]}")
        if self.log_std_min >= self.log_std_max:
            problems.append("log_std_min must be < log_std_max")
        if not self.log_std_min <= self.log_std_init <= self.log_std_max:
            problems.append("log_std_init must lie within [log_std_min, log_std_max]")
        if self.dr_low > self.dr_high:
            problems.append("dr_low must be <= dr_high")
        if self.minibatches > self.num_envs * self.horizon:
            problems.append("minibatches exceeds transitions per iteration")
        if problems:
            raise ConfigError(problems)
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    # -- text form

    def to_text(self) -> str:
        lines = ["[train]"]
        for f in fields(self):
            unit, doc = f.metadata.get("unit"), f.metadata.get("doc")
            note = " ".join(s for s in (doc, f"[{unit}]" if unit else "") if s)
            if note:
                lines.append(f"# {note}")
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str, overrides=None) -> "TrainConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError([f"unparseable config: {exc}"]) from None
        if parser.sections() != ["train"]:
            raise ConfigError([f"expected exactly one [train] section, found {parser.sections()}"])
        raw = dict(parser["train"])
        raw.update(overrides or {})
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        problems = [f"{k}: unknown key" for k in raw if k not in known]
        values = {}
        for k, v in raw.items():
            if k not in known:
                continue
            try:
                values[k] = _parse(known[k], v)
            except (TypeError, ValueError) as exc:
                problems.append(f"{k} = {v!r}: {exc}")
        algorithm = values.pop("algorithm", "randpol")
        if algorithm not in ALGORITHMS:
            raise ConfigError(problems + [f"algorithm = {algorithm!r}: must be one of {ALGORITHMS}"])
        try:
            cfg = cls.defaults(algorithm, **values)
        except ConfigError as exc:
            problems += exc.problems
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def load(cls, path, overrides=None) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_text(fh.read(), overrides)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())


ALGORITHM_DEFAULTS = {
    "randpol": dict(horizon=50, lr=3e-4, kl_adaptive=False),
    "dense_baseline": dict(horizon=24, lr=1e-3, kl_adaptive=True),
}


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(f, v):
    if not isinstance(v, str):
        return v
    v = v.strip()
    default = f.default
    if isinstance(default, bool):
        low = v.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError("expected a boolean")
    if isinstance(default, int):
        return int(v)
    if isinstance(default, float):
        return float(v)
    if isinstance(default, tuple):
        return tuple(int(x) for x in v.replace(",", " ").split())
    return v


def parse_overrides(items) -> dict:
    """``["lr=1e-3", "num_envs=8"]`` -> ``{"lr": "1e-3", "num_envs": "8"}``."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError([f"override {item!r} is not key=value"])
        out[key.strip()] = value.strip()
    return out


# Seed fan-out: every stream is keyed by (master_seed, stream id[, index]) so
# that resizing one consumer (e.g. num_envs) never shifts another's stream.
SEED_STREAMS = {
    "actor_basis": 0,
    "critic_basis": 1,
    "actor_init": 2,
    "critic_init": 3,
    "env": 4,
    "sampling": 5,
    "minibatch": 6,
    "eval_env": 7,
}


def seed_sequence(master_seed: int, stream: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(SEED_STREAMS[stream],))


def stream_rng(master_seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master_seed, stream))


def stream_seed64(master_seed: int, stream: str) -> int:
    return int(seed_sequence(master_seed, stream).generate_state(1, dtype=np.uint64)[0])
