"""Synthetic ground truth: ID classes as vMF mixtures with per-class sub-cluster counts,
OOD generators, and the text embedding-dump format."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .hypersphere import VmfParams, normalize, sample_vmf, uniform_sphere

log = logging.getLogger(__name__)

OOD_LABEL = -1


class DumpFormatError(ValueError):
    """Base class for malformed embedding dumps."""


class HeaderError(DumpFormatError):
    pass


class LabelError(DumpFormatError):
    pass


class NonFiniteError(DumpFormatError):
    pass


@dataclass
class ClassSpec:
    means: np.ndarray  # (m, d) unit sub-cluster means
    kappas: np.ndarray  # (m,)
    weights: np.ndarray  # (m,), sums to 1

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        m = self.means.shape[0]
        self.kappas = np.broadcast_to(np.asarray(self.kappas, dtype=float), (m,)).copy()
        self.weights = np.asarray(self.weights, dtype=float)
        if m < 1:
            raise ValueError("a class needs at least one sub-cluster")
        if self.weights.shape != (m,) or np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixing weights must be nonnegative, one per sub-cluster, summing to 1")


@dataclass
class SyntheticSpec:
    classes: list
    samples_per_class: int = 600
    input_dim: int | None = None  # None: no lift, inputs are the sphere points
    lift_noise: float = 0.05
    lift: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.classes[0].means.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def sub_means(self) -> np.ndarray:
        return np.concatenate([c.means for c in self.classes])


def _tangent_frame(center, m, rng):
    """m orthonormal directions orthogonal to `center`."""
    d = center.shape[0]
    G = rng.standard_normal((d, m))
    G -= np.outer(center, center @ G)
    Q, _ = np.linalg.qr(G)
    return Q[:, :m].T


def default_spec(rng, subclusters=(1, 2, 4), dim: int = 16, kappa: float = 50.0,
                 samples_per_class: int = 600, sub_angle_deg: float = 60.0,
                 lift_dim: int | None = None, lift_noise: float = 0.05) -> SyntheticSpec:
    """Class centers uniform on the sphere; each class's sub-cluster means sit at
    `sub_angle_deg` from its center along mutually orthogonal tangent directions.
    A single-cluster class is centered on its center."""
    theta = math.radians(sub_angle_deg)
    classes = []
    for m in subclusters:
        center = uniform_sphere(1, dim, rng)[0]
        if m == 1:
            means = center[None, :]
        else:
            U = _tangent_frame(center, m, rng)
            means = normalize(math.cos(theta) * center[None, :] + math.sin(theta) * U)
        classes.append(ClassSpec(means, kappa, np.full(m, 1.0 / m)))
    spec = SyntheticSpec(classes, samples_per_class, lift_dim, lift_noise)
    if lift_dim is not None:
        spec.lift = rng.standard_normal((dim, lift_dim)) / math.sqrt(dim)
    return spec


def generate_id(spec: SyntheticSpec, rng, n_per_class: int | None = None):
    """Draw (inputs, labels, sub_cluster_ids).

    Sub-cluster ids index into the class's sub-cluster list and are for
    evaluation only.
    """
    n = spec.samples_per_class if n_per_class is None else n_per_class
    X, y, sub = [], [], []
    for c, cls in enumerate(spec.classes):
        comp = rng.choice(len(cls.weights), size=n, p=cls.weights)
        pts = np.empty((n, spec.dim))
        for j in range(len(cls.weights)):
            idx = np.flatnonzero(comp == j)
            if idx.size:
                pts[idx] = sample_vmf(VmfParams(cls.means[j], cls.kappas[j]), idx.size, rng)
        X.append(pts)
        y.append(np.full(n, c))
        sub.append(comp)
    X = np.concatenate(X)
    return lift_points(spec, X, rng), np.concatenate(y), np.concatenate(sub)


def lift_points(spec: SyntheticSpec, X, rng):
    """Apply the spec's random linear lift plus Gaussian noise, renormalized; identity if none."""
    if spec.lift is None:
        return X
    Y = X @ spec.lift + spec.lift_noise * rng.standard_normal((X.shape[0], spec.lift.shape[1]))
    return normalize(Y)


def place_held_out_means(spec: SyntheticSpec, n_clusters: int, rng, min_angle_deg: float = 30.0,
                         max_angle_deg: float = 45.0, max_tries: int = 1000) -> np.ndarray:
    """Means for near-OOD clusters: each is an ID sub-cluster mean rotated by an angle in
    [min_angle, max_angle] toward a random tangent direction, kept only if it is at least
    `min_angle_deg` from every ID sub-cluster mean."""
    ref = spec.sub_means()
    cos_limit = math.cos(math.radians(min_angle_deg))
    out = []
    for _ in range(max_tries):
        base = ref[rng.integers(ref.shape[0])]
        theta = math.radians(rng.uniform(min_angle_deg, max_angle_deg))
        u = _tangent_frame(base, 1, rng)[0]
        cand = normalize(math.cos(theta) * base + math.sin(theta) * u)
        if np.max(ref @ cand) <= cos_limit + 1e-12:
            out.append(cand)
            if len(out) == n_clusters:
                return np.stack(out)
    raise RuntimeError(
        f"could not place {n_clusters} held-out means {min_angle_deg} degrees from all ID means "
        f"in {max_tries} tries")


def generate_ood(kind: str, n: int, d: int, rng, spec: SyntheticSpec | None = None,
                 n_clusters: int = 4, kappa: float = 50.0, min_angle_deg: float = 30.0,
                 max_angle_deg: float = 45.0):
    """OOD inputs. `uniform_sphere` is far-OOD; `held_out_vmf` draws from vMF clusters placed
    near (but at least min_angle_deg away from) the ID sub-clusters of `spec`."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if kind == "uniform_sphere":
        X = uniform_sphere(n, d, rng)
    elif kind == "held_out_vmf":
        if spec is None:
            raise ValueError("held_out_vmf needs the ID spec to keep its clusters disjoint")
        means = place_held_out_means(spec, n_clusters, rng, min_angle_deg, max_angle_deg)
        comp = rng.integers(n_clusters, size=n)
        X = np.empty((n, means.shape[1]))
        for j in range(n_clusters):
            idx = np.flatnonzero(comp == j)
            if idx.size:
                X[idx] = sample_vmf(VmfParams(means[j], kappa), idx.size, rng)
    else:
        raise ValueError(f"unknown OOD kind {kind!r}")
    if spec is not None:
        return lift_points(spec, X, rng)
    return X


# -- embedding dump format ------------------------------------------------------
# header "n,d,C", then one row per sample: label followed by d floats.

def save_embeddings(path, X, labels, n_classes: int) -> None:
    X = np.atleast_2d(X)
    with open(path, "w") as fh:
        fh.write(f"{X.shape[0]},{X.shape[1]},{n_classes}\n")
        for lab, row in zip(labels, X):
            fh.write(",".join([str(int(lab)), *(repr(float(v)) for v in row)]) + "\n")


def load_embeddings(path, allow_ood: bool = False):
    """Parse a dump into (inputs, labels); rows are L2-normalized on load.

    ID loads require labels in [0, C); OOD loads (allow_ood=True) require the -1 label.
    """
    with open(path) as fh:
        header = fh.readline()
        try:
            n, d, C = (int(t) for t in header.strip().split(","))
        except ValueError:
            raise HeaderError(f"{path}: malformed header {header.strip()!r}, expected 'n,d,C'") from None
        if n < 1 or d < 1 or C < 0:
            raise HeaderError(f"{path}: header values out of range: n={n}, d={d}, C={C}")
        X = np.empty((n, d))
        y = np.empty(n, dtype=int)
        for i in range(n):
            line = fh.readline()
            row = i + 2
            parts = line.strip().split(",")
            if len(parts) != d + 1:
                raise DumpFormatError(f"{path}: row {row} has {len(parts) - 1} values, expected {d}")
            try:
                lab = int(parts[0])
                vals = np.array(parts[1:], dtype=float)
            except ValueError:
                raise DumpFormatError(f"{path}: row {row} is not numeric") from None
            if allow_ood:
                if lab != OOD_LABEL:
                    raise LabelError(f"{path}: row {row} has label {lab}; OOD files use {OOD_LABEL}")
            elif not 0 <= lab < C:
                raise LabelError(f"{path}: row {row} has label {lab} outside [0, {C})")
            if not np.all(np.isfinite(vals)):
                raise NonFiniteError(f"{path}: row {row} contains non-finite values")
            X[i], y[i] = vals, lab
        if fh.readline().strip():
            raise DumpFormatError(f"{path}: more rows than the header's n={n}")
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms <= 0):
        raise DumpFormatError(f"{path}: row {int(np.argmin(norms)) + 2} is a zero vector")
    if np.any(np.abs(norms - 1.0) > 1e-3):
        log.warning("%s: %d rows were not unit norm and have been normalized",
                    path, int(np.sum(np.abs(norms - 1.0) > 1e-3)))
    return X / norms[:, None], y
