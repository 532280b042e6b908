"""Fully-connected policy network and optimizers, implemented directly on numpy.

The landing policy is a 15-130-72-40-4 MLP with ReLU hidden layers and a
tanh output head so every emitted stick command already sits in (-1, 1).
Backprop is written out by hand (reverse-mode through affine/ReLU/tanh) and
checked against finite differences in the tests; RMSProp and Adam are the
only optimizers. Everything is float64.

Checkpoint container (``save_checkpoint``/``load_checkpoint``): a single
file holding

    bytes 0..7    magic ``LLCKPT01``
    bytes 8..11   little-endian uint32 header length H
    bytes 12..    UTF-8 JSON header (sorted keys) with the layer sizes,
                  output activation, config hash, and an ordered array
                  manifest (name, shape); then the raw little-endian
                  float64 buffers concatenated in manifest order.

The byte layout has no timestamps, so identical inputs produce identical
files and round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError

POLICY_LAYER_SIZES = (15, 130, 72, 40, 4)
DEFAULT_LEARNING_RATE = 1e-4
RMSPROP_DECAY = 0.9
RMSPROP_EPS = 1e-8

_MAGIC = b"LLCKPT01"


@dataclass
class PolicyParams:
    """Weights and biases per layer; weights[i] has shape (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "tanh"  # "tanh" or "linear"

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            output_activation=self.output_activation,
        )

    def frozen(self) -> "PolicyParams":
        snap = self.copy()
        for a in snap.weights + snap.biases:
            a.flags.writeable = False
        return snap

    def fingerprint(self) -> int:
        crc = 0
        for a in self.weights + self.biases:
            crc = zlib.crc32(np.ascontiguousarray(a).tobytes(), crc)
        return crc


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class OptimizerState:
    """RMSProp running squared-gradient averages, one per parameter array."""

    cache_weights: list[np.ndarray]
    cache_biases: list[np.ndarray]
    learning_rate: float = DEFAULT_LEARNING_RATE
    decay: float = RMSPROP_DECAY
    eps: float = RMSPROP_EPS

    @staticmethod
    def for_params(params: PolicyParams, learning_rate: float = DEFAULT_LEARNING_RATE,
                   decay: float = RMSPROP_DECAY, eps: float = RMSPROP_EPS) -> "OptimizerState":
        return OptimizerState(
            cache_weights=[np.zeros_like(w) for w in params.weights],
            cache_biases=[np.zeros_like(b) for b in params.biases],
            learning_rate=learning_rate,
            decay=decay,
            eps=eps,
        )

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            cache_weights=[c.copy() for c in self.cache_weights],
            cache_biases=[c.copy() for c in self.cache_biases],
            learning_rate=self.learning_rate,
            decay=self.decay,
            eps=self.eps,
        )


@dataclass(frozen=True)
class Minibatch:
    observations: np.ndarray  # (N, obs_dim)
    actions: np.ndarray  # (N, act_dim)

    def __post_init__(self) -> None:
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("minibatch arrays must be 2-D")
        if len(self.observations) != len(self.actions):
            raise ValueError("observation/action row counts differ")
        if len(self.observations) < 1:
            raise ValueError("minibatch must be non-empty")

    def __len__(self) -> int:
        return len(self.observations)


def init_mlp(layer_sizes, rng: np.random.Generator, output_activation: str = "tanh",
             final_scale: float = 1.0) -> PolicyParams:
    """He-scaled normal weights (std sqrt(2/fan_in)), zero biases."""
    weights, biases = [], []
    n_layers = len(layer_sizes) - 1
    for i in range(n_layers):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        std = np.sqrt(2.0 / fan_in)
        if i == n_layers - 1:
            std *= final_scale
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return PolicyParams(weights=weights, biases=biases, output_activation=output_activation)


def init_policy(rng: np.random.Generator) -> PolicyParams:
    return init_mlp(POLICY_LAYER_SIZES, rng, output_activation="tanh")


def forward_cached(params: PolicyParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Batched forward pass keeping the per-layer activations for backprop."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cache = [h]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
        elif params.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
        cache.append(h)
    return h, cache


def forward(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; 1-D input gives a 1-D output."""
    x = np.asarray(x, dtype=np.float64)
    y, _ = forward_cached(params, x)
    return y[0] if x.ndim == 1 else y


def backward_from_output(params: PolicyParams, cache: list, grad_out: np.ndarray) -> Gradients:
    """Backpropagate an arbitrary dLoss/dOutput through the cached activations."""
    n_layers = len(params.weights)
    if params.output_activation == "tanh":
        delta = grad_out * (1.0 - cache[-1] ** 2)
    else:
        delta = grad_out
    g_w = [None] * n_layers
    g_b = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        h_prev = cache[i]
        g_w[i] = h_prev.T @ delta
        g_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (cache[i] > 0.0)
    return Gradients(weights=g_w, biases=g_b)  # type: ignore[arg-type]


def mse_loss(params: PolicyParams, batch: Minibatch) -> float:
    """Mean squared error over every element (N rows x action dims)."""
    pred, _ = forward_cached(params, batch.observations)
    return float(np.mean((pred - batch.actions) ** 2))


def mse_loss_and_grads(params: PolicyParams, batch: Minibatch) -> tuple[float, Gradients]:
    pred, cache = forward_cached(params, batch.observations)
    err = pred - batch.actions
    loss = float(np.mean(err**2))
    grad_out = 2.0 * err / err.size
    return loss, backward_from_output(params, cache, grad_out)


def backward(params: PolicyParams, batch: Minibatch) -> Gradients:
    return mse_loss_and_grads(params, batch)[1]


def rmsprop_step(params: PolicyParams, grads: Gradients, opt: OptimizerState) -> PolicyParams:
    """cache <- decay*cache + (1-decay)*g^2; param <- param - lr*g/(sqrt(cache)+eps). In place."""
    for p, g, c in zip(params.weights + params.biases,
                       grads.weights + grads.biases,
                       opt.cache_weights + opt.cache_biases):
        c *= opt.decay
        c += (1.0 - opt.decay) * g * g
        p -= opt.learning_rate * g / (np.sqrt(c) + opt.eps)
    return params


@dataclass
class AdamState:
    """Adam moments for an arbitrary list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_arrays(arrays, learning_rate: float = 3e-4) -> "AdamState":
        return AdamState(m=[np.zeros_like(a) for a in arrays],
                         v=[np.zeros_like(a) for a in arrays],
                         learning_rate=learning_rate)

    def step(self, arrays, grads) -> None:
        self.t += 1
        lr_t = self.learning_rate * np.sqrt(1.0 - self.beta2**self.t) / (1.0 - self.beta1**self.t)
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= lr_t * m / (np.sqrt(v) + self.eps)


def save_checkpoint(path, params: PolicyParams, opt: OptimizerState | None = None,
                    config_hash: str = "") -> None:
    """Write params (and optionally the optimizer cache) to the container format."""
    arrays: list[tuple[str, np.ndarray]] = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays.append((f"w{i}", w))
        arrays.append((f"b{i}", b))
    if opt is not None:
        for i, (cw, cb) in enumerate(zip(opt.cache_weights, opt.cache_biases)):
            arrays.append((f"opt_w{i}", cw))
            arrays.append((f"opt_b{i}", cb))
    header = {
        "layer_sizes": list(params.layer_sizes),
        "output_activation": params.output_activation,
        "config_hash": config_hash,
        "has_optimizer": opt is not None,
        "optimizer": None if opt is None else {
            "learning_rate": opt.learning_rate, "decay": opt.decay, "eps": opt.eps},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[PolicyParams, OptimizerState | None, str]:
    """Read a checkpoint container back; returns (params, optimizer or None, config hash)."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise CheckpointError(f"bad magic in {path}")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            data: dict[str, np.ndarray] = {}
            for entry in header["arrays"]:
                shape = tuple(entry["shape"])
                n = int(np.prod(shape)) if shape else 1
                buf = fh.read(8 * n)
                if len(buf) != 8 * n:
                    raise CheckpointError(f"truncated array {entry['name']} in {path}")
                data[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    except (OSError, ValueError, KeyError, struct.error) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc

    n_layers = len(header["layer_sizes"]) - 1
    params = PolicyParams(
        weights=[data[f"w{i}"] for i in range(n_layers)],
        biases=[data[f"b{i}"] for i in range(n_layers)],
        output_activation=header["output_activation"],
    )
    opt = None
    if header.get("has_optimizer"):
        meta = header["optimizer"]
        opt = OptimizerState(
            cache_weights=[data[f"opt_w{i}"] for i in range(n_layers)],
            cache_biases=[data[f"opt_b{i}"] for i in range(n_layers)],
            learning_rate=meta["learning_rate"], decay=meta["decay"], eps=meta["eps"],
        )
    return params, opt, header.get("config_hash", "")
