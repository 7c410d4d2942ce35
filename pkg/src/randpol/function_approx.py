"""Frozen random-feature networks, trainable readouts and dense MLPs.

Two representations share one small protocol so that the policy and value
heads do not care which one they wrap:

    encode(x)            -> code   (frozen part; identity for dense nets)
    forward_code(code)   -> (out, tape)
    backward(tape, g)    -> list of gradients aligned with parameters()
    parameters()         -> list of trainable arrays, updated in place

For ``RandomFeatureNet`` the code is the frozen feature matrix, so callers
that evaluate the same inputs many times (the learner) can encode once.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INIT_TAG = "uniform_fan_in"


def elu(z):
    """ELU with alpha fixed to 1."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.expm1(np.minimum(z, 0.0))


def _elu_inplace(h):
    neg = np.minimum(h, 0.0)
    np.expm1(neg, out=neg)
    np.maximum(h, 0.0, out=h)
    h += neg
    return h


def elu_grad(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


def _check_dims(*dims):
    for d in dims:
        if int(d) < 1:
            raise ValueError(f"layer dimensions must be >= 1, got {d}")


def _as_batch(x, dim, what="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (dim,):
        raise ValueError(f"{what} has trailing dimension {x.shape[-1:]}, expected ({dim},)")
    return x


def array_checksum(arrays: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class RandomBasis:
    """Frozen hidden layers producing the feature vector phi(x).

    Weights are stored as (fan_out, fan_in) and are read-only numpy arrays.
    Every entry is regenerated from ``seed``; nothing here is ever trained.
    """

    seed: int
    input_dim: int
    hidden_widths: tuple[int, ...]
    feature_dim: int
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "elu"
    init: str = INIT_TAG

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.feature_dim]

    def features(self, x):
        h = _as_batch(x, self.input_dim)
        for W, b in zip(self.weights, self.biases):
            h = h @ W.T
            h += b
            _elu_inplace(h)
        return h

    def num_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def checksum(self) -> str:
        arrays = []
        for W, b in zip(self.weights, self.biases):
            arrays += [W, b]
        return array_checksum(arrays)


def build_basis(seed: int, input_dim: int, hidden_widths: Sequence[int] = (500,),
                feature_dim: int = 400) -> RandomBasis:
    """Draw a frozen basis input -> hidden_widths... -> feature_dim.

    Each layer is sampled from U[-1/sqrt(fan_in), 1/sqrt(fan_in)] (weights and
    biases) by a generator seeded with ``seed`` alone.
    """
    hidden_widths = tuple(int(w) for w in hidden_widths)
    _check_dims(input_dim, feature_dim, *hidden_widths)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    rng = np.random.default_rng(seed)
    dims = [int(input_dim), *hidden_widths, int(feature_dim)]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        W.setflags(write=False)
        b.setflags(write=False)
        weights.append(W)
        biases.append(b)
    return RandomBasis(seed=seed, input_dim=int(input_dim), hidden_widths=hidden_widths,
                       feature_dim=int(feature_dim), weights=tuple(weights), biases=tuple(biases))


@dataclass(eq=False)
class LinearReadout:
    weight: np.ndarray  # (output_dim, feature_dim)
    bias: np.ndarray    # (output_dim,)

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError(f"incompatible readout shapes {self.weight.shape} / {self.bias.shape}")

    @classmethod
    def zeros(cls, output_dim: int, feature_dim: int) -> "LinearReadout":
        _check_dims(output_dim, feature_dim)
        return cls(np.zeros((output_dim, feature_dim)), np.zeros(output_dim))

    @property
    def output_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[1]

    def apply(self, f):
        f = _as_batch(f, self.feature_dim, "feature vector")
        return f @ self.weight.T + self.bias

    def parameters(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def num_trainable(self) -> int:
        return self.output_dim * (self.feature_dim + 1)

    def num_total(self) -> int:
        return self.num_trainable()


def readout_apply(r: LinearReadout, f):
    return r.apply(f)


def features(basis: RandomBasis, x):
    return basis.features(x)


class RandomFeatureNet:
    """Frozen basis followed by a trainable linear readout."""

    kind = "randomized"

    def __init__(self, basis: RandomBasis, readout: LinearReadout):
        if readout.feature_dim != basis.feature_dim:
            raise ValueError("readout feature_dim does not match basis")
        self.basis = basis
        self.readout = readout

    @classmethod
    def create(cls, seed, input_dim, output_dim, hidden_widths=(500,), feature_dim=400):
        basis = build_basis(seed, input_dim, hidden_widths, feature_dim)
        return cls(basis, LinearReadout.zeros(output_dim, feature_dim))

    @property
    def input_dim(self) -> int:
        return self.basis.input_dim

    @property
    def output_dim(self) -> int:
        return self.readout.output_dim

    def encode(self, x):
        return self.basis.features(x)

    def forward_code(self, code):
        return self.readout.apply(code), code

    def __call__(self, x):
        return self.readout.apply(self.encode(x))

    def backward(self, tape, out_grad):
        out_grad = np.asarray(out_grad, dtype=np.float64)
        f = np.atleast_2d(tape)
        g = out_grad.reshape(f.shape[0], -1)
        return [g.T @ f, g.sum(axis=0)]

    def parameters(self) -> list[np.ndarray]:
        return self.readout.parameters()

    def frozen_arrays(self) -> list[np.ndarray]:
        return [*self.basis.weights, *self.basis.biases]

    def num_trainable(self) -> int:
        return self.readout.num_trainable()

    def num_total(self) -> int:
        return self.readout.num_trainable() + self.basis.num_params()

    def bump(self):
        pass


@dataclass
class DenseTape:
    net_id: int
    version: int
    inputs: list  # input to each layer; inputs[i + 1] is the ELU output of hidden layer i
    output: np.ndarray


class DenseNet:
    """Fully trainable MLP: ELU on hidden layers, identity on the output."""

    kind = "dense"

    def __init__(self, layer_dims: Sequence[int], weights=None, biases=None, rng=None):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2:
            raise ValueError("DenseNet needs at least input and output dims")
        _check_dims(*layer_dims)
        self.layer_dims = layer_dims
        if weights is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weights, biases = [], []
            for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
                biases.append(rng.uniform(-bound, bound, size=fan_out))
        self.weights = [np.array(W, dtype=np.float64) for W in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for (fan_in, fan_out), W, b in zip(zip(layer_dims[:-1], layer_dims[1:]), self.weights, self.biases):
            if W.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ValueError(f"layer shape mismatch: {W.shape}, {b.shape} for {fan_in}->{fan_out}")
        self.version = 0

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def encode(self, x):
        return _as_batch(x, self.input_dim)

    def forward_code(self, code):
        return self.forward(code)

    def forward(self, x):
        h = _as_batch(x, self.input_dim)
        inputs = []
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ W.T
            h += b
            if i != last:
                _elu_inplace(h)
        return h, DenseTape(id(self), self.version, inputs, h)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape: DenseTape, out_grad):
        """Gradients of sum(out_grad * output) w.r.t. all weights and biases.

        Returned as [W0, b0, W1, b1, ...], matching ``parameters()``.
        """
        if tape.net_id != id(self) or tape.version != self.version:
            raise ValueError("stale or foreign tape: parameters changed since forward")
        g = np.asarray(out_grad, dtype=np.float64)
        batched = tape.inputs[0].ndim > 1
        g = g.reshape(tape.output.shape)
        grads = [None] * (2 * len(self.weights))
        for i in reversed(range(len(self.weights))):
            if i != len(self.weights) - 1:
                # ELU'(z) = 1 for z >= 0 and exp(z) = elu(z) + 1 otherwise
                g = g * (np.minimum(tape.inputs[i + 1], 0.0) + 1.0)
            x_in = tape.inputs[i]
            if batched:
                grads[2 * i] = g.T @ x_in
                grads[2 * i + 1] = g.sum(axis=0)
            else:
                grads[2 * i] = np.outer(g, x_in)
                grads[2 * i + 1] = g.copy()
            if i > 0:
                g = g @ self.weights[i]
        return grads

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def frozen_arrays(self) -> list[np.ndarray]:
        return []

    def num_trainable(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def num_total(self) -> int:
        return self.num_trainable()

    def bump(self):
        """Invalidate outstanding tapes after an in-place parameter update."""
        self.version += 1


def dense_forward(net: DenseNet, x):
    return net.forward(x)


def dense_backward(net: DenseNet, tape: DenseTape, output_grad):
    return net.backward(tape, output_grad)


def _as_models(models):
    out = []
    for m in models:
        if isinstance(m, (list, tuple)):
            out.extend(_as_models(m))
        else:
            out.append(m)
    return out


def count_trainable(*models) -> int:
    """Parameters the optimizer updates. A bare RandomBasis contributes 0."""
    total = 0
    for m in _as_models(models):
        if isinstance(m, RandomBasis):
            continue
        total += m.num_trainable()
    return total


def count_total(*models) -> int:
    """Trainable parameters plus frozen basis parameters."""
    total = 0
    for m in _as_models(models):
        total += m.num_params() if isinstance(m, RandomBasis) else m.num_total()
    return total
