"""Dynamic prototype controller.

Birth splits a prototype whose sample cluster is overloaded (variance above
`lambda_factor` times its class average, for `streak_required` consecutive
evaluations) along the top principal direction of its samples. Death removes
the prototype with the lowest boundary score (nearest inter-class distance over
nearest intra-class distance) when that score is below `boundary_threshold`.
Both run only inside their scheduled phase and respect a global cooldown.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .hypersphere import normalize

log = logging.getLogger(__name__)

WARMUP, BIRTH, DEATH, FROZEN = "warmup", "birth", "death", "frozen"


@dataclass
class ControllerConfig:
    lambda_factor: float = 2.0
    boundary_threshold: float = 2.5
    streak_required: int = 3
    cooldown_epochs: int = 5
    birth_start: int = 100
    birth_end: int = 150
    death_start: int = 150
    death_end: int = 200
    split_offset: float = 0.05
    k_min: int = 1
    k_max: int = 50
    weighted_variance: bool = False
    remove_all_flagged: bool = False

    def __post_init__(self):
        if not self.lambda_factor > 1:
            raise ValueError(f"lambda_factor must be > 1, got {self.lambda_factor}")
        if not self.boundary_threshold > 0:
            raise ValueError(f"boundary_threshold must be > 0, got {self.boundary_threshold}")
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ValueError(f"need 1 <= k_min <= k_max, got k_min={self.k_min}, k_max={self.k_max}")
        if self.streak_required < 1 or self.cooldown_epochs < 0:
            raise ValueError("streak_required must be >= 1 and cooldown_epochs >= 0")
        if not self.split_offset > 0:
            raise ValueError(f"split_offset must be positive, got {self.split_offset}")
        for name, (a, b) in (("birth", self.birth), ("death", self.death)):
            if a < 0 or b < a:
                raise ValueError(f"{name} phase [{a}, {b}) is not a valid interval")
        if self.birth_end > self.birth_start and self.death_end > self.death_start:
            if self.birth_start < self.death_end and self.death_start < self.birth_end:
                raise ValueError(
                    f"birth phase {list(self.birth)} overlaps death phase {list(self.death)}")

    @property
    def birth(self):
        return (self.birth_start, self.birth_end)

    @property
    def death(self):
        return (self.death_start, self.death_end)


@dataclass
class Event:
    epoch: int
    class_id: int
    action: str
    index: int
    trigger: float
    threshold: float

    def csv(self) -> str:
        return f"{self.epoch},{self.class_id},{self.action},{self.index},{self.trigger!r},{self.threshold!r}"


@dataclass
class ControllerState:
    phase: str = WARMUP
    cooldown_remaining: int = 0
    events: list = field(default_factory=list)


def phase_at(cfg: ControllerConfig, epoch: int) -> str:
    if cfg.birth_start <= epoch < cfg.birth_end:
        return BIRTH
    if cfg.death_start <= epoch < cfg.death_end:
        return DEATH
    active = [iv for iv in (cfg.birth, cfg.death) if iv[1] > iv[0]]
    if active and epoch < max(end for _, end in active):
        return WARMUP
    return FROZEN


def advance_epoch(state: ControllerState, cfg: ControllerConfig, epoch: int, events_fired: bool) -> ControllerState:
    """Close out `epoch`: engage or tick the cooldown and move to the phase of `epoch + 1`.

    An event at epoch e blocks evaluation at epochs e+1 .. e+cooldown_epochs.
    """
    if events_fired:
        state.cooldown_remaining = cfg.cooldown_epochs
    elif state.cooldown_remaining > 0:
        state.cooldown_remaining -= 1
    state.phase = phase_at(cfg, epoch + 1)
    return state


# -- birth --------------------------------------------------------------------

def cluster_variance(samples) -> float:
    """Mean squared Euclidean distance of the samples to their (unnormalized) mean."""
    Z = np.atleast_2d(np.asarray(samples, dtype=float))
    if Z.shape[0] == 0:
        raise ValueError("variance of an empty sample set is undefined")
    mu = Z.mean(axis=0)
    return float(np.mean(np.sum((Z - mu) ** 2, axis=1)))


def class_avg_variance(variances) -> float:
    v = np.asarray(variances, dtype=float)
    if v.size == 0:
        raise ValueError("no variances to average")
    return float(v.mean())


class VarianceAccumulator:
    """Mergeable per-prototype moment sums over an epoch: mass, sum z, sum z z^T.

    The second-moment matrix gives both the cluster variance (its trace) and
    the covariance needed for the principal split direction.
    """

    def __init__(self, counts, dim: int):
        self.mass = [np.zeros(k) for k in counts]
        self.first = [np.zeros((k, dim)) for k in counts]
        self.second = [np.zeros((k, dim, dim)) for k in counts]

    def add(self, c: int, z, weights) -> None:
        """Accumulate samples `z` (n, d) of class c with per-prototype weights (n, K_c)."""
        self.mass[c] += weights.sum(axis=0)
        self.first[c] += weights.T @ z
        self.second[c] += np.einsum("nk,ni,nj->kij", weights, z, z)

    def merge(self, other: "VarianceAccumulator") -> None:
        for c in range(len(self.mass)):
            self.mass[c] += other.mass[c]
            self.first[c] += other.first[c]
            self.second[c] += other.second[c]

    def moments(self, c: int, k: int):
        m = self.mass[c][k]
        if m <= 0:
            return None
        mu = self.first[c][k] / m
        cov = self.second[c][k] / m - np.outer(mu, mu)
        return mu, 0.5 * (cov + cov.T)

    def variances(self, c: int) -> np.ndarray:
        """Per-prototype variance, NaN where the prototype received no samples."""
        out = np.full(self.mass[c].shape[0], np.nan)
        for k in range(out.shape[0]):
            mom = self.moments(c, k)
            if mom is not None:
                out[k] = max(float(np.trace(mom[1])), 0.0)
        return out


def check_birth(protos, variances, cfg: ControllerConfig, state: ControllerState):
    """Update overload streaks and return split directives [(class, index, v, threshold)].

    Prototypes whose variance is undefined (no samples) are ignored and have
    their streak reset.
    """
    directives = []
    for c in range(protos.n_classes):
        v = np.asarray(variances[c], dtype=float)
        defined = ~np.isnan(v)
        streak = protos.streaks[c]
        if not np.any(defined):
            streak[:] = 0
            continue
        threshold = cfg.lambda_factor * class_avg_variance(v[defined])
        flagged = defined & (v > threshold)
        streak[flagged] += 1
        streak[~flagged] = 0
        room = cfg.k_max - protos.vectors[c].shape[0]
        ready = [k for k in np.flatnonzero(streak >= cfg.streak_required)]
        for k in sorted(ready, key=lambda k: -v[k])[:max(room, 0)]:
            directives.append((c, int(k), float(v[k]), float(threshold)))
    return directives


def top_principal_direction(cov, iters: int = 50, tol: float = 1e-8, rng=None) -> np.ndarray | None:
    """Leading eigenvector of a PSD matrix by power iteration; None if the matrix is ~0."""
    cov = np.asarray(cov, dtype=float)
    scale = np.trace(cov)
    if not scale > 1e-12:
        return None
    d = cov.shape[0]
    # deterministic start that is not orthogonal to the leading direction generically
    u = np.ones(d) / np.sqrt(d) if rng is None else normalize(rng.standard_normal(d))
    u = normalize(u + cov[np.argmax(np.diag(cov))] / scale)
    for _ in range(iters):
        w = cov @ u
        nw = np.linalg.norm(w)
        if nw <= 1e-300:
            return None
        w /= nw
        done = np.linalg.norm(w - u) < tol
        u = w
        if done:
            break
    return u


def split_along(p, cov, split_offset: float):
    u = top_principal_direction(cov)
    if u is None:
        return None
    return normalize(p + split_offset * u), normalize(p - split_offset * u)


def split_prototype(p, samples, split_offset: float = 0.05):
    """Two children of `p` displaced by +/- split_offset along the samples' top principal axis.

    Returns None when the samples are degenerate (fewer than two or all identical).
    """
    Z = np.atleast_2d(np.asarray(samples, dtype=float))
    if Z.shape[0] < 2:
        return None
    Zc = Z - Z.mean(axis=0)
    return split_along(np.asarray(p, dtype=float), Zc.T @ Zc / Z.shape[0], split_offset)


# -- death --------------------------------------------------------------------

def boundary_score(c: int, k: int, prototypes) -> float:
    """Nearest inter-class cosine distance over nearest intra-class cosine distance.

    Returns +inf when an intra-class prototype coincides with this one.
    """
    P = prototypes[c]
    if P.shape[0] < 2:
        raise ValueError("boundary score needs at least two prototypes in the class")
    others = [Q for j, Q in enumerate(prototypes) if j != c and Q.shape[0] > 0]
    if not others:
        raise ValueError("boundary score needs at least one other class")
    p = P[k]
    inter = np.min(1.0 - np.clip(np.concatenate(others) @ p, -1.0, 1.0))
    intra = np.min(1.0 - np.clip(np.delete(P, k, axis=0) @ p, -1.0, 1.0))
    if intra <= 0:
        return float("inf")
    return float(inter / intra)


def check_death(protos, cfg: ControllerConfig, state: ControllerState):
    """Removal directives [(class, index, B, threshold)] for prototypes with B below threshold.

    By default only the lowest-scoring prototype of each class is removed per event,
    never taking a class below k_min.
    """
    directives = []
    if protos.n_classes < 2:
        return directives
    for c in range(protos.n_classes):
        K = protos.vectors[c].shape[0]
        if K < 2 or K <= cfg.k_min:
            continue
        scores = np.array([boundary_score(c, k, protos.vectors) for k in range(K)])
        if np.any(np.isinf(scores)):
            log.warning("class %d prototypes %s coincide with a sibling; exempt from death",
                        c, np.flatnonzero(np.isinf(scores)).tolist())
        flagged = [int(k) for k in np.argsort(scores, kind="stable") if scores[k] < cfg.boundary_threshold]
        budget = K - cfg.k_min if cfg.remove_all_flagged else min(1, K - cfg.k_min)
        for k in flagged[:budget]:
            directives.append((c, k, float(scores[k]), cfg.boundary_threshold))
    return directives


def apply_births(protos, directives, acc: VarianceAccumulator, cfg: ControllerConfig, epoch: int):
    """Split prototypes in place; returns the Events that actually happened."""
    events = []
    # descending index per class so earlier indices stay valid
    for c, k, v, thr in sorted(directives, key=lambda d: (d[0], -d[1])):
        mom = acc.moments(c, k)
        children = None if mom is None else split_along(protos.vectors[c][k], mom[1], cfg.split_offset)
        if children is None:
            log.info("epoch %d: split of class %d prototype %d aborted (degenerate samples)", epoch, c, k)
            protos.streaks[c][k] = 0
            continue
        protos.replace(c, k, np.stack(children))
        events.append(Event(epoch, c, "birth", k, v, thr))
    return sorted(events, key=lambda e: (e.class_id, e.index))


def apply_deaths(protos, directives, epoch: int):
    events = []
    for c, k, b, thr in sorted(directives, key=lambda d: (d[0], -d[1])):
        protos.remove(c, k)
        events.append(Event(epoch, c, "death", k, b, thr))
        if protos.vectors[c].shape[0] == 1:
            log.info("epoch %d: class %d reduced to one prototype; it can no longer give birth", epoch, c)
    return sorted(events, key=lambda e: (e.class_id, e.index))


def step_controller(protos, acc: VarianceAccumulator, cfg: ControllerConfig, state: ControllerState, epoch: int):
    """End-of-epoch controller evaluation. Mutates `protos` and `state`; returns this epoch's Events."""
    state.phase = phase_at(cfg, epoch)
    events = []
    if state.cooldown_remaining == 0:
        if state.phase == BIRTH:
            variances = [acc.variances(c) for c in range(protos.n_classes)]
            events = apply_births(protos, check_birth(protos, variances, cfg, state), acc, cfg, epoch)
        elif state.phase == DEATH:
            events = apply_deaths(protos, check_death(protos, cfg, state), epoch)
    state.events.extend(events)
    advance_epoch(state, cfg, epoch, bool(events))
    return events
