"""Small MLPs with hand-written backprop, EMA coupling, and checkpointing.

Each network is an affine/ReLU stack whose final output rows are
L2-normalized. Backprop is manual: the normalization Jacobian is applied
first, then the usual affine/ReLU chain. Checkpoints use the DCBM binary
layout: magic ``b"DCBM"``, u32 LE version (=1), u8 network count, per network
a u32 dim count followed by u32 dims, then every parameter as LE f64 in
layer order (weights row-major, then biases).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateOutputError, FormatError, ShapeError

_DCBM_MAGIC = b"DCBM"
_DCBM_VERSION = 1


@dataclass
class MLPNetwork:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def create(cls, dims: list[int], rng: np.random.Generator) -> "MLPNetwork":
        """He-initialized stack for the given [d_in, hidden..., d_out] dims."""
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MLPNetwork":
        return MLPNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre_acts: list[np.ndarray]  # affine outputs before activation
    prenorm: np.ndarray  # final affine output before row normalization
    norms: np.ndarray  # row norms of prenorm
    z: np.ndarray  # normalized output


@dataclass
class ParamGrads:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.d_weights + self.d_biases)


def forward_cached(net: MLPNetwork, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.weights[0].shape[0]:
        raise ShapeError(f"input shape {x.shape} does not match d_in={net.weights[0].shape[0]}")
    inputs, pre_acts = [], []
    a = x
    last = len(net.weights) - 1
    for li, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        y = a @ w + b
        pre_acts.append(y)
        a = np.maximum(y, 0.0) if li < last else y
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise DegenerateOutputError("a network output row has (near-)zero norm")
    z = a / norms
    return z, ForwardCache(inputs, pre_acts, a, norms, z)


def forward(net: MLPNetwork, x: np.ndarray) -> np.ndarray:
    return forward_cached(net, x)[0]


def backward(net: MLPNetwork, cache: ForwardCache, d_z: np.ndarray) -> tuple[ParamGrads, np.ndarray]:
    """Chain d(loss)/d(normalized output) back to parameters and input."""
    if d_z.shape != cache.z.shape:
        raise ShapeError(f"gradient shape {d_z.shape} does not match output {cache.z.shape}")
    # Jacobian of row normalization y -> y/||y||
    delta = (d_z - (d_z * cache.z).sum(axis=1, keepdims=True) * cache.z) / cache.norms
    d_weights: list[np.ndarray] = [None] * len(net.weights)
    d_biases: list[np.ndarray] = [None] * len(net.weights)
    last = len(net.weights) - 1
    for li in range(last, -1, -1):
        if li < last:
            delta = delta * (cache.pre_acts[li] > 0.0)
        d_weights[li] = cache.inputs[li].T @ delta
        d_biases[li] = delta.sum(axis=0)
        delta = delta @ net.weights[li].T
    return ParamGrads(d_weights, d_biases), delta


def sgd_step(net: MLPNetwork, grads: ParamGrads, lr: float) -> None:
    if not grads.all_finite():
        raise ValueError("non-finite gradient; aborting the update")
    for w, dw in zip(net.weights, grads.d_weights):
        w -= lr * dw
    for b, db in zip(net.biases, grads.d_biases):
        b -= lr * db


def ema_update(online: MLPNetwork, target: MLPNetwork, momentum: float) -> None:
    """theta_t <- momentum * theta_t + (1 - momentum) * theta_o, every parameter."""
    if online.layer_dims != target.layer_dims:
        raise ShapeError("online and target architectures differ")
    for po, pt in zip(online.weights + online.biases, target.weights + target.biases):
        pt *= momentum
        pt += (1.0 - momentum) * po


def hash_params(*nets: MLPNetwork) -> str:
    h = hashlib.sha256()
    for net in nets:
        for p in net.weights + net.biases:
            h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


@dataclass
class DualNetworks:
    """Online encoder, EMA target encoder, and the asymmetric predictor."""

    online: MLPNetwork
    target: MLPNetwork
    predictor: MLPNetwork

    @classmethod
    def create(cls, d_in: int, hidden_dim: int, feature_dim: int, rng: np.random.Generator) -> "DualNetworks":
        online = MLPNetwork.create([d_in, hidden_dim, feature_dim], rng)
        # predictor hidden width doubles the feature width
        predictor = MLPNetwork.create([feature_dim, 2 * feature_dim, feature_dim], rng)
        return cls(online=online, target=online.copy(), predictor=predictor)

    def copy(self) -> "DualNetworks":
        return DualNetworks(self.online.copy(), self.target.copy(), self.predictor.copy())


def save_networks(nets: DualNetworks, path: str) -> None:
    parts = [nets.online, nets.target, nets.predictor]
    with open(path, "wb") as fh:
        fh.write(_DCBM_MAGIC)
        fh.write(struct.pack("<IB", _DCBM_VERSION, len(parts)))
        for net in parts:
            dims = net.layer_dims
            fh.write(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
        for net in parts:
            for w, b in zip(net.weights, net.biases):
                fh.write(w.astype("<f8", copy=False).tobytes())
                fh.write(b.astype("<f8", copy=False).tobytes())


def load_networks(path: str) -> DualNetworks:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _DCBM_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r}")
    version, count = struct.unpack_from("<IB", raw, 4)
    if version != _DCBM_VERSION or count != 3:
        raise FormatError(f"unsupported checkpoint (version {version}, {count} networks)")
    off = 9
    all_dims = []
    for _ in range(count):
        (ndims,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = list(struct.unpack_from(f"<{ndims}I", raw, off))
        off += 4 * ndims
        all_dims.append(dims)
    nets = []
    for dims in all_dims:
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
            off += 8 * fan_in * fan_out
            b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
            off += 8 * fan_out
            weights.append(w.copy())
            biases.append(b.copy())
        nets.append(MLPNetwork(weights, biases))
    if off != len(raw):
        raise FormatError("checkpoint has trailing bytes")
    return DualNetworks(*nets)
