"""Mahalanobis OOD scoring and detection metrics (FPR@95, AUROC, AUPR)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

TPR_LEVEL = 0.95


class SingularCovarianceError(ValueError):
    pass


@dataclass
class ScoreModel:
    means: np.ndarray  # (C, D)
    precision: np.ndarray  # (D, D), or (C, D, D) when per_class
    threshold: float = float("nan")
    per_class: bool = False


@dataclass
class MetricsReport:
    fpr_at_95: float
    auroc: float
    aupr: float

    def as_text(self, name: str = "") -> str:
        lines = [f"dataset = {name}"] if name else []
        lines += [f"fpr95 = {self.fpr_at_95!r}", f"auroc = {self.auroc!r}", f"aupr = {self.aupr!r}"]
        return "\n".join(lines) + "\n"

    def as_row(self, name: str) -> str:
        return f"{name},{self.fpr_at_95:.6f},{self.auroc:.6f},{self.aupr:.6f}"


def _shrunk_precision(S, shrinkage):
    D = S.shape[0]
    target = np.trace(S) / D * np.eye(D)
    cov = (1.0 - shrinkage) * S + shrinkage * target
    eig = np.linalg.eigvalsh(cov)
    if not eig[0] > 1e-10 * max(eig[-1], 1e-300):
        raise SingularCovarianceError(
            f"covariance is singular after shrinkage={shrinkage} (min eigenvalue {eig[0]:.3g}); "
            "increase the shrinkage")
    prec = np.linalg.solve(cov, np.eye(D))
    return 0.5 * (prec + prec.T)


def fit_score_model(features, labels, shrinkage: float = 0.05, per_class: bool = False) -> ScoreModel:
    """Class means and a shared (tied) precision from the pooled within-class covariance,
    blended toward a trace-scaled identity by `shrinkage`."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels)
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError(f"shrinkage must be in [0, 1], got {shrinkage}")
    classes = np.unique(y)
    if classes.size == 0 or not np.array_equal(classes, np.arange(classes.size)):
        raise ValueError("labels must be 0..C-1 with every class present")
    means, covs = [], []
    for c in classes:
        Xc = X[y == c]
        if Xc.shape[0] < 2:
            raise ValueError(f"class {c} needs at least two samples")
        mu = Xc.mean(axis=0)
        means.append(mu)
        covs.append((Xc - mu).T @ (Xc - mu))
    means = np.stack(means)
    if per_class:
        prec = np.stack([_shrunk_precision(S / (y == c).sum(), shrinkage) for c, S in zip(classes, covs)])
    else:
        prec = _shrunk_precision(sum(covs) / X.shape[0], shrinkage)
    return ScoreModel(means, prec, per_class=per_class)


def mahalanobis_distances(model: ScoreModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.means.shape[1]:
        raise ValueError(f"feature dim {X.shape[1]} does not match model dim {model.means.shape[1]}")
    diff = X[:, None, :] - model.means[None, :, :]
    if model.per_class:
        return np.einsum("nci,cij,ncj->nc", diff, model.precision, diff)
    return np.einsum("nci,ij,ncj->nc", diff, model.precision, diff)


def mahalanobis_score(model: ScoreModel, X):
    """Negative distance to the nearest class mean; higher means more in-distribution.

    Returns a float for a single vector and an array for a batch.
    """
    single = np.asarray(X).ndim == 1
    s = -np.min(mahalanobis_distances(model, X), axis=1)
    return float(s[0]) if single else s


def id_threshold(id_scores, tpr: float = TPR_LEVEL) -> float:
    """Score threshold accepting a `tpr` fraction of ID samples (linear interpolation)."""
    return float(np.percentile(np.asarray(id_scores, dtype=float), 100.0 * (1.0 - tpr)))


def calibrate(model: ScoreModel, id_val_scores) -> ScoreModel:
    model.threshold = id_threshold(id_val_scores)
    return model


def is_ood(model: ScoreModel, scores) -> np.ndarray:
    return np.asarray(scores) < model.threshold


def auroc(id_scores, ood_scores) -> float:
    """Mann-Whitney statistic with midranks: P(id > ood) + P(tie) / 2."""
    a = np.asarray(id_scores, dtype=float)
    b = np.asarray(ood_scores, dtype=float)
    ranks = rankdata(np.concatenate([a, b]))
    n1, n0 = a.size, b.size
    return float((ranks[:n1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def aupr(id_scores, ood_scores) -> float:
    """Trapezoidal area under the precision-recall curve with ID as the positive class.

    One curve point per distinct score (thresholds t, accepting score >= t), starting at
    (recall 0, precision 1).
    """
    a = np.asarray(id_scores, dtype=float)
    b = np.asarray(ood_scores, dtype=float)
    scores = np.concatenate([a, b])
    pos = np.concatenate([np.ones(a.size), np.zeros(b.size)])
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(pos[order])
    fp = np.cumsum(1.0 - pos[order])
    last = np.r_[s[1:] != s[:-1], True]
    tp, fp = tp[last], fp[last]
    recall = np.r_[0.0, tp / a.size]
    precision = np.r_[1.0, tp / (tp + fp)]
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))


def compute_metrics(id_scores, ood_scores) -> MetricsReport:
    a = np.asarray(id_scores, dtype=float)
    b = np.asarray(ood_scores, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both score lists must be non-empty")
    t = id_threshold(a)
    return MetricsReport(fpr_at_95=float(np.mean(b >= t)), auroc=auroc(a, b), aupr=aupr(a, b))
