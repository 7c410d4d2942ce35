"""Versioned binary checkpoints.

Layout::

    b"RPCK"                      magic
    uint32 LE                    format version
    uint64 LE                    header length in bytes
    header                       UTF-8 JSON
    payload                      float64 little-endian, row-major

The header records the config text and its hash, each frozen basis (seed,
layer dims, init distribution tag, sha256 of the regenerated arrays), the
ordered payload sections and a sha256 of the payload. Frozen weights are not
stored: they are rebuilt from their seeds on load and checked against the
recorded checksums. Sections, in order:

    trainable   every trainable parameter (readouts or dense layers, then
                the policy log-std), actor before critic
    normalizer  count, mean, m2 for the obs, privileged and return statistics
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..function_approx import INIT_TAG
from ..normalize import RunningMeanStd
from .config import TrainConfig

MAGIC = b"RPCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(RuntimeError):
    pass


def _trainable_entries(policy, critic):
    entries = []
    for role, head in (("actor", policy), ("critic", critic)):
        net = head.net
        if net.kind == "randomized":
            names = ["readout.weight", "readout.bias"]
        else:
            names = [f"layer{i}.{w}" for i in range(len(net.weights)) for w in ("weight", "bias")]
        for name, arr in zip(names, net.parameters()):
            entries.append((f"{role}.{name}", arr))
    entries.append(("actor.log_std", policy.log_std))
    return entries


def _normalizer_entries(normalizers: dict):
    return [(f"normalizer.{k}", rms.state()) for k, rms in sorted(normalizers.items())]


def _bases(policy, critic):
    out = []
    for role, head in (("actor", policy), ("critic", critic)):
        basis = getattr(head.net, "basis", None)
        if basis is not None:
            out.append({"role": role, "seed": str(basis.seed), "layer_dims": basis.layer_dims,
                        "activation": basis.activation, "init": basis.init,
                        "checksum": basis.checksum()})
    return out


def save_checkpoint(run, path, normalizers=None):
    """Write ``run`` (anything with cfg, policy, critic, collector) to ``path``."""
    cfg: TrainConfig = run.cfg
    policy, critic = run.policy, run.critic
    normalizers = normalizers if normalizers is not None else run.collector.normalizers()
    sections = {"trainable": _trainable_entries(policy, critic),
                "normalizer": _normalizer_entries(normalizers)}
    chunks, layout = [], []
    for sec, entries in sections.items():
        items = []
        for name, arr in entries:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            chunks.append(arr.ravel())
            items.append({"name": name, "shape": list(arr.shape)})
        layout.append({"name": sec, "entries": items,
                       "length": int(sum(np.prod(i["shape"], dtype=np.int64) for i in items))})
    payload = np.concatenate(chunks).astype("<f8").tobytes()
    cur = getattr(getattr(run, "envs", None), "curriculum", None)
    header = {
        "format_version": FORMAT_VERSION,
        "algorithm": cfg.algorithm,
        "env": cfg.env,
        "config_hash": cfg.hash(),
        "config": cfg.to_text(),
        "iteration": int(getattr(run, "iteration", 0)),
        "frozen_init": INIT_TAG,
        "bases": _bases(policy, critic),
        "dense_layer_dims": {role: head.net.layer_dims for role, head in (("actor", policy), ("critic", critic))
                             if head.net.kind == "dense"},
        "curriculum": None if cur is None else {"v_range": list(cur.v_range), "w_range": list(cur.w_range)},
        "sections": layout,
        "payload_floats": len(payload) // 8,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    tmp.replace(path)
    return path


def read_checkpoint(path):
    """Parse and integrity-check a checkpoint file -> (header, {section: {name: array}})."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = data[start + hlen:]
    if len(payload) != 8 * header["payload_floats"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected "
                              f"{8 * header['payload_floats']} (truncated?)")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8")
    sections, pos = {}, 0
    for sec in header["sections"]:
        arrays = {}
        for item in sec["entries"]:
            n = int(np.prod(item["shape"], dtype=np.int64))
            arrays[item["name"]] = flat[pos:pos + n].reshape(item["shape"]).astype(np.float64)
            pos += n
        sections[sec["name"]] = arrays
    return header, sections


@dataclass
class Checkpoint:
    cfg: TrainConfig
    policy: object
    critic: object
    normalizers: dict
    header: dict


def load_checkpoint(path, expected_config: TrainConfig | None = None) -> Checkpoint:
    """Rebuild models and normalizers from ``path``.

    With ``expected_config`` the stored config hash must match it exactly.
    """
    from .experiment import build_models
    from ..envs import ENVIRONMENTS

    header, sections = read_checkpoint(path)
    cfg = TrainConfig.from_text(header["config"])
    if cfg.hash() != header["config_hash"]:
        raise CheckpointError(f"{path}: stored config does not match its hash")
    if expected_config is not None and expected_config.hash() != header["config_hash"]:
        raise CheckpointError(
            f"{path}: checkpoint config ({header['algorithm']}/{header['env']}) does not match "
            f"the requested config ({expected_config.algorithm}/{expected_config.env})")
    env_cls = ENVIRONMENTS[cfg.env]
    policy, critic = build_models(cfg, env_cls.obs_dim, env_cls.privileged_dim, env_cls.action_dim)
    for rec, stored in zip(_bases(policy, critic), header["bases"]):
        if rec["checksum"] != stored["checksum"]:
            raise CheckpointError(f"{path}: regenerated {rec['role']} basis differs from the stored "
                                  "checksum (random generator drift?)")
    for name, arr in _trainable_entries(policy, critic):
        src = sections["trainable"].get(name)
        if src is None or src.shape != arr.shape:
            raise CheckpointError(f"{path}: trainable entry {name} missing or misshapen")
        arr[...] = src
    policy.net.bump()
    critic.net.bump()
    normalizers = {}
    for name, state in sections["normalizer"].items():
        key = name.split(".", 1)[1]
        rms = RunningMeanStd(() if key == "return" else ((state.size - 1) // 2,))
        rms.load_state(state)
        rms.frozen = True
        normalizers[key] = rms
    return Checkpoint(cfg, policy, critic, normalizers, header)
