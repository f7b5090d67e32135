"""Seeded desk-scale experiments shared by scripts/ and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import apply_ablation, override
from .datagen import default_spec, generate_id, generate_ood
from .scoring import MetricsReport, compute_metrics, fit_score_model, mahalanobis_score
from .trainer import TrainConfig, TrainResult, full_train

TRUE_SUBCLUSTERS = (1, 2, 4)
ARMS = {"full": None, "no-birth": "no-birth", "no-death": "no-death", "no-birth-death": "no-birth-death"}


@dataclass
class Scenario:
    X: np.ndarray
    y: np.ndarray
    sub: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    ood: dict


def make_scenario(seed: int, n_test: int = 300, n_ood: int = 900, lift_dim=None) -> Scenario:
    """Default (1, 2, 4) scenario with held-out-vMF near-OOD and uniform-sphere far-OOD sets."""
    rng = np.random.default_rng([seed, 2024])
    spec = default_spec(rng, TRUE_SUBCLUSTERS, lift_dim=lift_dim)
    X, y, sub = generate_id(spec, rng)
    X_test, y_test, _ = generate_id(spec, rng, n_per_class=n_test)
    ood = {
        "held_out_vmf": generate_ood("held_out_vmf", n_ood, spec.dim, rng, spec=spec),
        "uniform_sphere": generate_ood("uniform_sphere", n_ood, spec.dim, rng, spec=spec),
    }
    return Scenario(X, y, sub, X_test, y_test, ood)


def evaluate(result: TrainResult, sc: Scenario, features: str = "penultimate", shrinkage: float = 0.05) -> dict:
    """Fit the Mahalanobis model on ID train features and score every OOD set."""
    embed = result.encoder.features if features == "penultimate" else result.encoder.forward
    model = fit_score_model(embed(sc.X), sc.y, shrinkage)
    id_scores = mahalanobis_score(model, embed(sc.X_test))
    return {name: compute_metrics(id_scores, mahalanobis_score(model, embed(O))) for name, O in sc.ood.items()}


def run(cfg: TrainConfig, sc: Scenario, ablation=None, out_dir=None):
    cfg = apply_ablation(cfg, ablation)
    result = full_train(cfg, sc.X, sc.y, out_dir=out_dir, n_classes=len(TRUE_SUBCLUSTERS))
    return result, evaluate(result, sc)


def acceptance_config(seed: int, **flat) -> TrainConfig:
    """Desk-scale default schedule (warmup, birth [100, 150), death [150, 200), frozen to 300)."""
    return override(TrainConfig(seed=seed), **flat)


def recovery_stats(counts, truth=TRUE_SUBCLUSTERS):
    ordered = all(a <= b for a, b in zip(counts, counts[1:]))
    within = sum(abs(k - t) <= 1 for k, t in zip(counts, truth))
    return ordered, within


def phase_monotone(totals, cfg: TrainConfig, initial: int) -> bool:
    """Total prototype count non-decreasing in birth, non-increasing in death, constant elsewhere.

    Record i holds the count after epoch i's controller step, so the change at epoch i
    is totals[i] - totals[i-1] (with the initial count before epoch 0).
    """
    from .controller import BIRTH, DEATH, phase_at

    prev = initial
    for epoch, total in enumerate(totals):
        delta = total - prev
        phase = phase_at(cfg.controller, epoch)
        if phase == BIRTH and delta < 0:
            return False
        if phase == DEATH and delta > 0:
            return False
        if phase not in (BIRTH, DEATH) and delta != 0:
            return False
        prev = total
    return True


def summarize(metrics: dict[str, MetricsReport]) -> str:
    return " ".join(f"{k}: auroc={m.auroc:.4f} fpr95={m.fpr_at_95:.3f}" for k, m in metrics.items())
