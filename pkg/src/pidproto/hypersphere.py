"""Unit-hypersphere geometry and von Mises-Fisher sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Norms below this are treated as a degenerate direction.
MIN_NORM = 1e-150


class DegenerateVectorError(ValueError):
    pass


@dataclass(frozen=True)
class VmfParams:
    """Mean direction and concentration of a vMF distribution.

    The normalizing constant is never evaluated: it cancels in every
    posterior and loss computed by this package.
    """

    mean: np.ndarray
    kappa: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim != 1 or mean.shape[0] < 2:
            raise ValueError("vMF mean must be a vector with d >= 2")
        if abs(np.linalg.norm(mean) - 1.0) > 1e-6:
            raise ValueError("vMF mean must have unit norm")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        object.__setattr__(self, "mean", mean)


def normalize(v, axis=-1):
    """Scale `v` to unit L2 norm along `axis`.

    Works on single vectors and on row batches. Raises
    DegenerateVectorError if any norm underflows.
    """
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(~(norm > MIN_NORM)):
        raise DegenerateVectorError("cannot normalize a zero-length vector")
    return v / norm


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(a @ b, -1.0, 1.0))


def cosine_matrix(A, B) -> np.ndarray:
    """Pairwise clamped cosines between rows of A and rows of B."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return np.clip(A @ B.T, -1.0, 1.0)


def uniform_sphere(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return normalize(x)


def _sample_cos_angle(kappa: float, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    # Wood (1994) rejection sampler for w = mu^T x.
    m = d - 1
    b = m / (np.sqrt(4.0 * kappa**2 + m**2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m * np.log(1.0 - x0**2)

    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        z = rng.beta(m / 2.0, m / 2.0, size=todo.size)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=todo.size)
        ok = kappa * w + m * np.log(1.0 - x0 * w) - c >= np.log(u)
        out[todo[ok]] = w[ok]
        todo = todo[~ok]
    return out


def sample_vmf(params: VmfParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `n` exact samples from vMF(mean, kappa), returned as rows."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    mu = params.mean
    d = mu.shape[0]
    if params.kappa == 0:
        return uniform_sphere(n, d, rng)

    w = _sample_cos_angle(params.kappa, d, n, rng)
    # tangent directions orthogonal to mu
    v = rng.standard_normal((n, d))
    v -= np.outer(v @ mu, mu)
    v = normalize(v)
    x = w[:, None] * mu[None, :] + np.sqrt(np.clip(1.0 - w**2, 0.0, None))[:, None] * v
    return normalize(x)


def mean_resultant_length(X) -> float:
    return float(np.linalg.norm(np.mean(X, axis=0)))
