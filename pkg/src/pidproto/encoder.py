"""Small MLP encoder with a linear projection head onto the unit hypersphere.

Forward and backward passes are written out by hand; parameters are plain
numpy arrays updated by SGD with momentum.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PIDE"
FORMAT_VERSION = 1


class DivergenceError(RuntimeError):
    pass


class MlpEncoder:
    """x -> tanh hidden layers (body) -> linear head -> L2 normalization.

    `weights[i]` has shape (fan_in, fan_out). The last layer is the projection head;
    the output of the last hidden layer is the "penultimate" feature used for scoring.
    """

    def __init__(self, in_dim: int, hidden=(64, 64), out_dim: int = 16, rng=None):
        self.sizes = [in_dim, *hidden, out_dim]
        self.weights = []
        self.biases = []
        rng = rng if rng is not None else np.random.default_rng(0)
        # unit-variance fan-in uniform, zero bias: keeps input geometry at init
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = math.sqrt(3.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    @property
    def feature_dim(self):
        return self.sizes[-2]

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def _check_inputs(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.in_dim:
            raise ValueError(f"input dim {X.shape[1]} does not match encoder input dim {self.in_dim}")
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs contain non-finite values")
        return X

    def forward(self, X, return_cache: bool = False):
        X = self._check_inputs(X)
        acts = [X]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
            acts.append(h)
        v = h @ self.weights[-1] + self.biases[-1]
        norm = np.linalg.norm(v, axis=1, keepdims=True)
        z = v / np.maximum(norm, 1e-12)
        if return_cache:
            return z, (acts, z, norm)
        return z

    def features(self, X) -> np.ndarray:
        """Penultimate (last hidden layer) activations."""
        h = self._check_inputs(X)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
        return h

    def backward(self, cache, grad_z):
        """Parameter gradients, in `params()` order, for upstream gradient dL/dz."""
        acts, z, norm = cache
        grad_z = np.asarray(grad_z, dtype=float)
        if grad_z.shape != z.shape:
            raise ValueError(f"grad_z shape {grad_z.shape} does not match output shape {z.shape}")
        # d(v/|v|)/dv = (I - z z^T) / |v|
        g = (grad_z - np.sum(grad_z * z, axis=1, keepdims=True) * z) / np.maximum(norm, 1e-12)
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            h = acts[i]
            grads.append((h.T @ g, g.sum(axis=0)))
            if i > 0:
                g = (g @ self.weights[i].T) * (1.0 - h**2)
        flat = []
        for gW, gb in reversed(grads):
            flat += [gW, gb]
        return flat

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", FORMAT_VERSION, len(self.sizes)))
            fh.write(struct.pack(f"<{len(self.sizes)}I", *self.sizes))
            for p in self.params():
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "MlpEncoder":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != MAGIC:
            raise ValueError(f"{path}: not an encoder checkpoint (bad magic)")
        version, n_sizes = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        sizes = list(struct.unpack_from(f"<{n_sizes}I", blob, 12))
        enc = cls.__new__(cls)
        enc.sizes = sizes
        enc.weights, enc.biases = [], []
        offset = 12 + 4 * n_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            for shape in ((fan_in, fan_out), (fan_out,)):
                count = int(np.prod(shape))
                arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(float).reshape(shape)
                offset += 4 * count
                (enc.weights if len(shape) == 2 else enc.biases).append(arr)
        if offset != len(blob):
            raise ValueError(f"{path}: checkpoint size does not match its architecture header")
        return enc


@dataclass
class SgdState:
    lr: float = 0.05
    momentum: float = 0.9
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def sgd_step(enc: MlpEncoder, grads, state: SgdState, lr: float | None = None):
    """In-place momentum update: v <- m v + g; w <- w - lr v."""
    params = enc.params()
    if len(grads) != len(params):
        raise ValueError("gradient list does not match parameters")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient; step aborted")
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    step = state.lr if lr is None else lr
    for p, g, v in zip(params, grads, state.velocity):
        v *= state.momentum
        v += g
        p -= step * v
    return enc, state


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / epochs))
