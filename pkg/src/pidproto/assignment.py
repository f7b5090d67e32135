"""E-step: balanced Sinkhorn-Knopp assignment of class samples to class prototypes,
followed by top-k sparsification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._numeric import logsumexp

DEFAULT_EPSILON = 0.05
DEFAULT_ITERS = 100
DEFAULT_K_TOP = 2


@dataclass
class AssignmentMatrix:
    """Sparse, row-normalized weights of one class's batch samples over its prototypes.

    `sample_index` maps rows back to positions in the batch.
    """

    weights: np.ndarray
    class_id: int
    sample_index: np.ndarray = field(default=None)

    @property
    def n_prototypes(self) -> int:
        return self.weights.shape[1]


def sinkhorn_assign(similarities, epsilon: float = DEFAULT_EPSILON, iters: int = DEFAULT_ITERS) -> np.ndarray:
    """Entropic transport plan between n samples (mass 1 each) and K prototypes
    (mass n/K each) for the Gibbs kernel exp(similarities / epsilon).

    Each row of the kernel is shifted by its max before exponentiating; when the
    per-row dynamic range could underflow, the iteration runs in the log domain.
    The final half-step normalizes rows so each sample's weights sum to exactly 1.
    """
    S = np.asarray(similarities, dtype=float)
    if S.ndim != 2 or S.shape[0] < 1 or S.shape[1] < 1:
        raise ValueError(f"similarities must be a non-empty matrix, got shape {S.shape}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not np.all(np.isfinite(S)):
        raise ValueError("similarities contain non-finite values")

    n, K = S.shape
    log_kernel = S / epsilon
    log_kernel = log_kernel - log_kernel.max(axis=1, keepdims=True)
    if log_kernel.min() < -_SAFE_LOG_RANGE:
        return _sinkhorn_log(log_kernel, iters)

    kernel = np.exp(log_kernel)
    col_mass = n / K
    v = np.ones(K)
    for _ in range(iters):
        u = 1.0 / (kernel @ v)
        v = col_mass / (kernel.T @ u)
    plan = kernel * v[None, :]
    return plan / plan.sum(axis=1, keepdims=True)


# exp(-600) is ~1e-261, far from float64 underflow even after n*K-fold scaling
_SAFE_LOG_RANGE = 600.0


def _sinkhorn_log(log_kernel, iters):
    n, K = log_kernel.shape
    log_col_mass = np.log(n / K)
    log_v = np.zeros(K)
    for _ in range(iters):
        log_u = -logsumexp(log_kernel + log_v[None, :], axis=1)
        log_v = log_col_mass - logsumexp(log_kernel + log_u[:, None], axis=0)
    log_plan = log_kernel + log_v[None, :]
    log_plan -= logsumexp(log_plan, axis=1, keepdims=True)
    return np.exp(log_plan)


def topk_prune(weights, k_top: int = DEFAULT_K_TOP, class_id: int = 0, sample_index=None) -> AssignmentMatrix:
    """Keep the k_top largest weights per row (ties go to the lower index) and renormalize."""
    W = np.asarray(weights, dtype=float)
    n, K = W.shape
    if not 1 <= k_top <= K:
        raise ValueError(f"k_top must be in [1, {K}], got {k_top}")
    order = np.argsort(-W, axis=1, kind="stable")[:, :k_top]
    rows = np.arange(n)[:, None]
    pruned = np.zeros_like(W)
    pruned[rows, order] = W[rows, order]
    total = pruned.sum(axis=1, keepdims=True)
    # rows whose survivors all underflowed fall back to the first survivor
    dead = total[:, 0] <= 0
    if np.any(dead):
        pruned[dead, order[dead, 0]] = 1.0
        total[dead] = 1.0
    return AssignmentMatrix(pruned / total, class_id, sample_index)


def hard_assign(assign) -> np.ndarray:
    """Argmax prototype per sample, ties to the lower index."""
    W = assign.weights if isinstance(assign, AssignmentMatrix) else np.asarray(assign)
    return np.argmax(W, axis=1)


def assign_batch(z, labels, prototypes, epsilon=DEFAULT_EPSILON, iters=DEFAULT_ITERS, k_top=DEFAULT_K_TOP):
    """Per-class E-step over a batch. Classes absent from the batch are skipped.

    `prototypes` is a sequence of (K_c, d) arrays. k_top is capped at K_c.
    Returns {class_id: AssignmentMatrix}.
    """
    out = {}
    for c, P in enumerate(prototypes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        sims = np.clip(z[idx] @ P.T, -1.0, 1.0)
        plan = sinkhorn_assign(sims, epsilon, iters)
        out[c] = topk_prune(plan, min(k_top, P.shape[0]), class_id=c, sample_index=idx)
    return out
