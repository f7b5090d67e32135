"""M-step objective: class posterior, MLE loss, prototype-contrastive prior, and
the gradient of the joint loss with respect to the embeddings."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._numeric import logsumexp

log = logging.getLogger(__name__)


@dataclass
class LossConfig:
    tau: float = 0.1
    tau_p: float = 0.2
    lambda_weight: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.tau_p > 0:
            raise ValueError(f"tau_p must be positive, got {self.tau_p}")
        if not self.lambda_weight >= 0:
            raise ValueError(f"lambda_weight must be >= 0, got {self.lambda_weight}")


@dataclass
class LossBreakdown:
    mle: float
    proto_contra: float
    total: float


def _check_classes(prototypes):
    for c, P in enumerate(prototypes):
        if P.shape[0] == 0:
            raise ValueError(f"class {c} has no prototypes")


def class_posterior(z, prototypes, weights, tau: float) -> np.ndarray:
    """Posterior over classes for a single embedding.

    `prototypes[c]` is (K_c, d); `weights[c]` is the length-K_c mixture weight
    vector of this sample for class c.
    """
    _check_classes(prototypes)
    z = np.asarray(z, dtype=float)
    per_class = []
    for P, w in zip(prototypes, weights):
        w = np.asarray(w, dtype=float)
        if w.shape != (P.shape[0],) or np.any(w < 0):
            raise ValueError("weights must be nonnegative with one entry per prototype")
        with np.errstate(divide="ignore"):
            per_class.append(logsumexp(P @ z / tau + np.log(w)))
    per_class = np.array(per_class)
    return np.exp(per_class - logsumexp(per_class))


def batch_weights(labels, prototypes, assigns) -> np.ndarray:
    """Dense (N, sum K_c) mixture-weight matrix for a batch.

    A sample's own-class block holds its sparse E-step weights. Blocks of the
    other classes carry the uniform prior 1/K_j, since the E-step only assigns
    a sample within its own class.
    """
    labels = np.asarray(labels)
    counts = [P.shape[0] for P in prototypes]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    W = np.zeros((labels.shape[0], offsets[-1]))
    for j, K in enumerate(counts):
        W[:, offsets[j]:offsets[j + 1]] = 1.0 / K
    for c, a in assigns.items():
        if a.weights.shape[1] != counts[c]:
            raise ValueError(f"stale assignment for class {c}: {a.weights.shape[1]} columns, {counts[c]} prototypes")
        W[a.sample_index, offsets[c]:offsets[c + 1]] = a.weights
    missing = np.setdiff1d(np.unique(labels), list(assigns))
    if missing.size:
        raise ValueError(f"no assignments for classes {missing.tolist()} present in the batch")
    return W


def _mle_terms(z, labels, prototypes, assigns, tau):
    _check_classes(prototypes)
    labels = np.asarray(labels)
    P = np.concatenate(prototypes, axis=0)
    owner = np.concatenate([np.full(p.shape[0], c) for c, p in enumerate(prototypes)])
    W = batch_weights(labels, prototypes, assigns)
    with np.errstate(divide="ignore"):
        a = z @ P.T / tau + np.log(W)
    own = owner[None, :] == labels[:, None]
    a_own = np.where(own, a, -np.inf)
    log_den = logsumexp(a, axis=1, keepdims=True)
    log_num = logsumexp(a_own, axis=1, keepdims=True)
    return P, a, a_own, log_num, log_den


def mle_loss(z, labels, prototypes, assigns, cfg: LossConfig) -> float:
    z = np.atleast_2d(z)
    _, _, _, log_num, log_den = _mle_terms(z, labels, prototypes, assigns, cfg.tau)
    return float(np.mean(log_den - log_num))


def proto_contra_loss(prototypes, cfg: LossConfig) -> float:
    """InfoNCE-style prior over prototypes: intra-class pairs are positives,
    every other prototype is a negative.

    A class with a single prototype has no positive pair; it is scored as if it
    had a coincident partner (similarity 1), entering both numerator and
    denominator, which keeps the term finite.
    """
    _check_classes(prototypes)
    P = np.concatenate(prototypes, axis=0)
    if P.shape[0] < 2:
        raise ValueError("prototype-contrastive loss needs at least two prototypes")
    owner = np.concatenate([np.full(p.shape[0], c) for c, p in enumerate(prototypes)])
    G = P @ P.T / cfg.tau_p
    np.fill_diagonal(G, -np.inf)
    same = owner[:, None] == owner[None, :]
    log_num = logsumexp(np.where(same, G, -np.inf), axis=1)
    log_den = logsumexp(G, axis=1)
    lonely = np.array([prototypes[c].shape[0] == 1 for c in owner])
    if np.any(lonely):
        log.debug("pseudo-positive used for %d single-prototype classes", int(lonely.sum()))
        pseudo = 1.0 / cfg.tau_p
        log_num[lonely] = pseudo
        log_den[lonely] = np.logaddexp(log_den[lonely], pseudo)
    return float(-np.mean(log_num - log_den))


def joint_loss_and_grad(z, labels, prototypes, assigns, cfg: LossConfig):
    """Joint loss value and dL/dz for each embedding row.

    Prototypes and assignment weights are held fixed, so only the MLE term
    contributes to the gradient. The gradient is the raw (unprojected) one;
    the encoder's normalization backward projects it onto the sphere.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n = z.shape[0]
    P, a, a_own, log_num, log_den = _mle_terms(z, labels, prototypes, assigns, cfg.tau)
    mle = float(np.mean(log_den - log_num))
    pc = proto_contra_loss(prototypes, cfg) if P.shape[0] >= 2 else 0.0
    soft_all = np.exp(a - log_den)
    soft_own = np.exp(a_own - log_num)
    grad = (soft_all - soft_own) @ P / (cfg.tau * n)
    breakdown = LossBreakdown(mle=mle, proto_contra=pc, total=mle + cfg.lambda_weight * pc)
    return breakdown, grad
