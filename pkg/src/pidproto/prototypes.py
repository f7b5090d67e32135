"""Per-class prototype storage and the non-gradient EMA position update."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hypersphere import normalize, uniform_sphere

DEFAULT_ALPHA = 0.99
DEFAULT_K_INIT = 6


@dataclass
class PrototypeSet:
    """Variable-length unit prototypes per class plus per-prototype bookkeeping.

    `version` increments on every mutation so callers can assert which
    prototype state a computation read.
    """

    vectors: list
    ages: list = field(default=None)
    streaks: list = field(default=None)
    version: int = 0

    def __post_init__(self):
        self.vectors = [np.atleast_2d(np.asarray(v, dtype=float)).copy() for v in self.vectors]
        if self.ages is None:
            self.ages = [np.zeros(v.shape[0], dtype=int) for v in self.vectors]
        if self.streaks is None:
            self.streaks = [np.zeros(v.shape[0], dtype=int) for v in self.vectors]

    @property
    def n_classes(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors[0].shape[1]

    def counts(self) -> list:
        return [v.shape[0] for v in self.vectors]

    def total(self) -> int:
        return sum(self.counts())

    def copy(self) -> "PrototypeSet":
        return PrototypeSet(
            [v.copy() for v in self.vectors],
            [a.copy() for a in self.ages],
            [s.copy() for s in self.streaks],
            self.version,
        )

    def replace(self, c: int, k: int, children) -> None:
        """Swap prototype k of class c for the given children (new state zeroed)."""
        children = np.atleast_2d(children)
        m = children.shape[0]
        self.vectors[c] = np.concatenate([self.vectors[c][:k], children, self.vectors[c][k + 1:]])
        self.ages[c] = np.concatenate([self.ages[c][:k], np.zeros(m, dtype=int), self.ages[c][k + 1:]])
        self.streaks[c] = np.concatenate([self.streaks[c][:k], np.zeros(m, dtype=int), self.streaks[c][k + 1:]])
        self.version += 1

    def remove(self, c: int, k: int) -> None:
        if self.vectors[c].shape[0] <= 1:
            raise ValueError(f"class {c} would be left without prototypes")
        self.replace(c, k, np.empty((0, self.dim)))

    def check(self, tol: float = 1e-6) -> None:
        for c, v in enumerate(self.vectors):
            if v.shape[0] < 1:
                raise AssertionError(f"class {c} has no prototypes")
            if np.any(np.abs(np.linalg.norm(v, axis=1) - 1.0) > tol):
                raise AssertionError(f"class {c} has non-unit prototypes")


def init_prototypes(n_classes: int, k_init: int, dim: int, rng: np.random.Generator) -> PrototypeSet:
    if n_classes < 1 or k_init < 1:
        raise ValueError("need at least one class and one prototype per class")
    return PrototypeSet([uniform_sphere(k_init, dim, rng) for _ in range(n_classes)])


def ema_update(protos: PrototypeSet, z, labels, assigns, alpha: float = DEFAULT_ALPHA) -> PrototypeSet:
    """p <- Normalize(alpha p + (1 - alpha) sum_i w_ik z_i), over the class's batch samples.

    Prototypes that received no weight in this batch are left untouched.
    Updates `protos` in place and returns it.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    z = np.atleast_2d(z)
    for c, a in assigns.items():
        pulled = a.weights.T @ z[a.sample_index]
        mass = a.weights.sum(axis=0)
        live = mass > 0
        if not np.any(live):
            continue
        P = protos.vectors[c]
        P[live] = normalize(alpha * P[live] + (1.0 - alpha) * pulled[live])
    protos.version += 1
    return protos


def write_snapshot(fh, epoch: int, protos: PrototypeSet) -> None:
    """Append one CSV record per prototype: epoch, class, index, d floats."""
    for c, P in enumerate(protos.vectors):
        for k, p in enumerate(P):
            fh.write(",".join([str(epoch), str(c), str(k), *(repr(float(x)) for x in p)]) + "\n")


def read_snapshots(path) -> dict:
    """Parse a snapshot file into {epoch: [per-class (K_c, d) arrays]}."""
    rows = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            epoch, c, k = int(parts[0]), int(parts[1]), int(parts[2])
            rows.setdefault(epoch, {}).setdefault(c, []).append((k, np.array(parts[3:], dtype=float)))
    out = {}
    for epoch, per_class in rows.items():
        out[epoch] = [np.stack([v for _, v in sorted(per_class[c], key=lambda t: t[0])]) for c in sorted(per_class)]
    return out
