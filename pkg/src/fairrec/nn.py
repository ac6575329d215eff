"""Small float64 neural-network toolkit with hand-derived backward passes.

Layers operate on a single vector ``(in,)`` or a row batch ``(B, in)``.
Forward passes are pure; backward passes accumulate into ``layer.grads``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numba
import numpy as np


class ShapeError(ValueError):
    pass


class TrainingDivergenceError(FloatingPointError):
    pass


def glorot_uniform(n_in: int, n_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class Dense:
    """Affine map ``y = W x + b`` with ``W`` of shape (out, in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {"W": glorot_uniform(n_in, n_out, rng), "b": np.zeros(n_out)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def W(self) -> np.ndarray:
        return self.params["W"]

    @property
    def b(self) -> np.ndarray:
        return self.params["b"]

    @property
    def n_in(self) -> int:
        return self.params["W"].shape[1]

    @property
    def n_out(self) -> int:
        return self.params["W"].shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        if x.ndim == 1:
            self.grads["W"] += np.outer(upstream, x)
            self.grads["b"] += upstream
        else:
            self.grads["W"] += upstream.T @ x
            self.grads["b"] += upstream.sum(axis=0)
        return upstream @ self.params["W"]

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)


def pack_layers(layers: list[Dense]) -> tuple[np.ndarray, np.ndarray]:
    """Move the layers' params and grads into two flat buffers and rebind them as views.

    Optimizer steps over the flat buffer then touch every tensor in one call.
    """
    tensors = [(layer, name) for layer in layers for name in layer.params]
    total = sum(layer.params[name].size for layer, name in tensors)
    flat_p, flat_g = np.zeros(total), np.zeros(total)
    off = 0
    for layer, name in tensors:
        shape, n = layer.params[name].shape, layer.params[name].size
        flat_p[off:off + n] = layer.params[name].reshape(-1)
        layer.params[name] = flat_p[off:off + n].reshape(shape)
        layer.grads[name] = flat_g[off:off + n].reshape(shape)
        off += n
    return flat_p, flat_g


def dense_forward(layer: Dense, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return np.where(x > 0, upstream, 0.0)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(s: np.ndarray, upstream: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product through softmax given its output ``s``."""
    return s * (upstream - np.sum(s * upstream, axis=axis, keepdims=True))


class MLP:
    """Dense layers with ReLU between them and a linear output layer."""

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = [Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cache(x)[0]

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        # cache holds each layer's input; pre-activations are recomputed cheaply in backward
        cache = []
        pre = []
        for k, layer in enumerate(self.layers):
            cache.append(x)
            a = layer.forward(x)
            pre.append(a)
            x = relu(a) if k < len(self.layers) - 1 else a
        return x, list(zip(cache, pre))

    def backward(self, cache, upstream: np.ndarray) -> np.ndarray:
        g = upstream
        for k in range(len(self.layers) - 1, -1, -1):
            x_in, a = cache[k]
            if k < len(self.layers) - 1:
                g = relu_backward(a, g)
            g = self.layers[k].backward(x_in, g)
        return g

    def named_params(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out[f"{prefix}{k}.{name}"] = arr
        return out

    def named_grads(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.grads.items():
                out[f"{prefix}{k}.{name}"] = arr
        return out

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@numba.njit(cache=True)
def _adam_kernel(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    for k in range(p.size):
        gk = g[k]
        mk = beta1 * m[k] + (1.0 - beta1) * gk
        vk = beta2 * v[k] + (1.0 - beta2) * gk * gk
        m[k] = mk
        v[k] = vk
        p[k] -= lr * (mk / bc1) / (np.sqrt(vk / bc2) + eps)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingDivergenceError(f"non-finite gradient for {name}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ShapeError(f"{name}: parameter {p.shape} vs gradient {g.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        _adam_kernel(p.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                     state.m[name].reshape(-1), state.v[name].reshape(-1),
                     state.lr, state.beta1, state.beta2, state.eps, bc1, bc2)
    return state


def grad_check(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic ``grads`` and central differences.

    ``loss_fn`` is re-evaluated after perturbing each parameter entry in
    place. ``max_entries`` samples that many entries per tensor.
    """
    worst = 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    for name, p in params.items():
        flat = p.reshape(-1)
        g = np.asarray(grads[name]).reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn()
            flat[j] = orig - h
            down = loss_fn()
            flat[j] = orig
            numeric = (up - down) / (2.0 * h)
            analytic = g[j]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


_MAGIC = b"FRNN"
_VERSION = 1


def save_tensors(tensors: Mapping[str, np.ndarray], path: str | Path) -> None:
    """Flat binary checkpoint: header then (name, rank, dims, float64 LE data) per tensor."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f8").copy(order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", data, off)
        off += 8 * rank
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(dims).astype(np.float64)
        off += 8 * size
    return out
