"""Three-layer ReLU perceptron with hand-written backward pass and Adam.

Parameters are stored as float32; forward and backward run in float64.
Weights are ``(out, in)`` so a layer computes ``x @ W.T + b``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CacheMismatch,
    FormatError,
    NonFiniteGradient,
    NonFiniteInput,
    ShapeError,
)

ARCH = (1024, 512, 256, 128)
N_PARAMS = 689_024  # 1024*512+512 + 512*256+256 + 256*128+128

MODEL_MAGIC = b"NAVM"
MODEL_VERSION = 1


def _count(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


assert _count(ARCH) == N_PARAMS


@dataclass(eq=False)
class MlpModel:
    """Weights and biases of ``rho``. ``strict`` pins the paper architecture."""

    weights: list
    biases: list
    seed: int = 0
    strict: bool = True

    def __post_init__(self):
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ShapeError("model must have exactly three linear layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i + 1}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i + 1}: input width {w.shape[1]} does not chain")
        if self.strict:
            if self.widths != ARCH:
                raise ShapeError(f"architecture {self.widths} != {ARCH}")
            if self.n_params != N_PARAMS:
                raise ShapeError(f"parameter count {self.n_params} != {N_PARAMS}")

    @property
    def widths(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self) -> list:
        """Parameter arrays in canonical order W1, b1, W2, b2, W3, b3."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def astype(self, dtype) -> "MlpModel":
        return MlpModel([w.astype(dtype) for w in self.weights],
                        [b.astype(dtype) for b in self.biases], self.seed, self.strict)

    def copy(self) -> "MlpModel":
        return self.astype(self.dtype)

    def equals(self, other: "MlpModel") -> bool:
        """Bitwise parameter equality."""
        return all(a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.params(), other.params()))


def init_model(seed: int, widths: Sequence[int] = ARCH, dtype=np.float32) -> MlpModel:
    """He fan-in normal for the ReLU layers, fan-in normal for the output layer, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        gain = 1.0 if i == len(widths) - 2 else 2.0
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(gain / fan_in)
        weights.append(w.astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(weights, biases, seed, strict=tuple(widths) == ARCH)


@dataclass
class ActivationCache:
    model_id: int
    x: Optional[np.ndarray]  # None when forward started from the layer-1 pre-activation
    z1: np.ndarray
    z2: np.ndarray
    a1: np.ndarray = field(repr=False)
    a2: np.ndarray = field(repr=False)
    squeeze: bool = False


def _p64(model: MlpModel):
    return [p.astype(np.float64, copy=False) for p in model.params()]


def forward_hidden(model: MlpModel, z1: np.ndarray, x=None, squeeze=False):
    """Run layers 2..3 given the layer-1 pre-activation ``z1`` of shape ``(N, h1)``."""
    _, _, w2, b2, w3, b3 = _p64(model)
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2.T + b2
    a2 = np.maximum(z2, 0.0)
    out = a2 @ w3.T + b3
    return out, ActivationCache(id(model), x, z1, z2, a1, a2, squeeze)


def forward(model: MlpModel, x: np.ndarray):
    """Returns ``(output, cache)``; accepts a single vector or a ``(N, in)`` batch."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = x.reshape(1, -1) if squeeze else x
    if x2.ndim != 2 or x2.shape[1] != model.widths[0]:
        raise ShapeError(f"input shape {x.shape} incompatible with width {model.widths[0]}")
    if not np.all(np.isfinite(x2)):
        raise NonFiniteInput("forward input contains NaN or Inf")
    w1, b1 = _p64(model)[:2]
    out, cache = forward_hidden(model, x2 @ w1.T + b1, x=x2, squeeze=squeeze)
    return (out[0] if squeeze else out), cache


def backward_hidden(model: MlpModel, cache: ActivationCache, grad_output: np.ndarray):
    """Gradients of layers 2..3 and the cotangent of the layer-1 pre-activation."""
    if cache.model_id != id(model):
        raise CacheMismatch("activation cache was produced by a different model")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.ndim == 1:
        g = g.reshape(1, -1)
    if g.shape != (cache.a2.shape[0], model.widths[-1]):
        raise CacheMismatch(f"grad_output shape {g.shape} does not match cache")
    _, _, w2, _, w3, _ = _p64(model)
    dw3 = g.T @ cache.a2
    db3 = g.sum(axis=0)
    dz2 = (g @ w3) * (cache.z2 > 0)
    dw2 = dz2.T @ cache.a1
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2) * (cache.z1 > 0)
    return [dw2, db2, dw3, db3], dz1


def backward(model: MlpModel, cache: ActivationCache, grad_output: np.ndarray):
    """Returns ``(grads, grad_input)`` with grads ordered like :meth:`MlpModel.params`."""
    if cache.x is None:
        raise CacheMismatch("cache has no layer input; use backward_hidden")
    tail, dz1 = backward_hidden(model, cache, grad_output)
    w1 = model.weights[0].astype(np.float64, copy=False)
    grads = [dz1.T @ cache.x, dz1.sum(axis=0)] + tail
    grad_input = dz1 @ w1
    return grads, (grad_input[0] if cache.squeeze else grad_input)


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        if isinstance(params, MlpModel):
            params = params.params()
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], **hyper)


def adam_step(model, state: AdamState, gradients) -> None:
    """Bias-corrected Adam update, in place. ``model`` may be an MlpModel or a list of arrays."""
    params = model.params() if isinstance(model, MlpModel) else list(model)
    if len(gradients) != len(params):
        raise ShapeError(f"{len(gradients)} gradients for {len(params)} parameters")
    for p, g in zip(params, gradients):
        if np.shape(g) != p.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or Inf")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, gradients, state.first_moment, state.second_moment):
        g = np.asarray(g, dtype=np.float64)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p[...] = (p.astype(np.float64) - update).astype(p.dtype)


_MHEAD = struct.Struct("<4sHQ")
_DIMS = struct.Struct("<II")


def encode_model(model: MlpModel) -> bytes:
    out = [_MHEAD.pack(MODEL_MAGIC, MODEL_VERSION, int(model.seed) & 0xFFFFFFFFFFFFFFFF)]
    for w, b in zip(model.weights, model.biases):
        out.append(_DIMS.pack(*w.shape))
        out.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(out)


def save_model(model: MlpModel, path) -> None:
    Path(path).write_bytes(encode_model(model))


def decode_model(data: bytes, strict: bool = True) -> MlpModel:
    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated model file at offset {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    magic, version, seed = _MHEAD.unpack(take(_MHEAD.size))
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad model magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    weights, biases = [], []
    for i in range(3):
        out_dim, in_dim = _DIMS.unpack(take(_DIMS.size))
        if strict and (in_dim, out_dim) != (ARCH[i], ARCH[i + 1]):
            raise ShapeError(f"layer {i + 1} is {in_dim}->{out_dim}, expected {ARCH[i]}->{ARCH[i + 1]}")
        w = np.frombuffer(take(4 * out_dim * in_dim), dtype="<f4").reshape(out_dim, in_dim)
        b = np.frombuffer(take(4 * out_dim), dtype="<f4")
        weights.append(w.astype(np.float32))
        biases.append(b.astype(np.float32))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes in model file")
    return MlpModel(weights, biases, seed, strict=strict)


def load_model(path, strict: bool = True) -> MlpModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return decode_model(data, strict)
