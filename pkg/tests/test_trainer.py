import inspect

import numpy as np
import pytest

from pidproto import trainer as trainer_mod
from pidproto.config import override
from pidproto.encoder import DivergenceError
from pidproto.experiments import make_scenario, phase_monotone
from pidproto.objective import LossBreakdown
from pidproto.trainer import TrainConfig, full_train, init_state, train_epoch


def small_cfg(**flat):
    base = {"epochs": 20, "controller.birth_start": 0, "controller.birth_end": 0,
            "controller.death_start": 0, "controller.death_end": 0}
    base.update(flat)
    return override(TrainConfig(), **base)


@pytest.fixture(scope="module")
def scenario():
    return make_scenario(0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_frozen_epoch_keeps_counts(scenario):
    cfg = small_cfg(epochs=1)
    state = init_state(cfg, scenario.X.shape[1], 3)
    rec = train_epoch(state, scenario.X, scenario.y, cfg)
    assert rec.counts == [6, 6, 6] and rec.total_prototypes == 18 and rec.n_events == 0
    state.protos.check()


def test_determinism(scenario):
    cfg = small_cfg(epochs=3)
    a = full_train(cfg, scenario.X, scenario.y)
    b = full_train(cfg, scenario.X, scenario.y)
    assert [r.csv() for r in a.records] == [r.csv() for r in b.records]
    assert all(np.array_equal(u, v) for u, v in zip(a.protos.vectors, b.protos.vectors))


def test_loss_decreases_over_twenty_epochs():
    wins = 0
    for seed in range(5):
        sc = make_scenario(seed)
        res = full_train(small_cfg(seed=seed), sc.X, sc.y)
        wins += res.records[19].loss < res.records[0].loss
    assert wins >= 3


def test_single_prototype_training_converges():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(1, 0.3, (100, 4)), rng.normal(-1, 0.3, (100, 4))])
    y = np.repeat([0, 1], 100)
    res = full_train(small_cfg(**{"prototypes.k_init": 1, "epochs": 15}), X, y)
    assert res.records[-1].loss < res.records[0].loss
    assert res.protos.counts() == [1, 1]


def test_empty_phases_keep_counts_constant(scenario):
    res = full_train(small_cfg(epochs=8), scenario.X, scenario.y)
    assert all(r.counts == [6, 6, 6] for r in res.records)


def test_active_controller_trajectory_shape(scenario):
    # permissive thresholds so both mechanisms fire on a short schedule
    cfg = small_cfg(**{
        "epochs": 40, "controller.birth_start": 5, "controller.birth_end": 20,
        "controller.death_start": 20, "controller.death_end": 35, "controller.lambda_factor": 1.05,
        "controller.streak_required": 1, "controller.cooldown_epochs": 2,
        "controller.boundary_threshold": 1e6, "prototypes.k_init": 3,
    })
    res = full_train(cfg, scenario.X, scenario.y)
    actions = {e.action for e in res.events}
    assert actions == {"birth", "death"}
    assert phase_monotone([r.total_prototypes for r in res.records], cfg, 9)
    epochs = sorted({e.epoch for e in res.events})
    assert all(b - a > 2 for a, b in zip(epochs, epochs[1:]))
    for r in res.records:
        assert sum(r.counts) == r.total_prototypes
        assert all(1 <= k <= 50 for k in r.counts)


def test_trainer_never_sees_subcluster_ids():
    params = inspect.signature(full_train).parameters
    assert list(params)[:3] == ["cfg", "X", "y"]
    assert "sub" not in params


def test_outputs_written(tmp_path, scenario):
    res = full_train(small_cfg(epochs=3, snapshot_every=2), scenario.X, scenario.y, out_dir=tmp_path)
    for name in ("trajectory.csv", "counts.csv", "events.csv", "snapshots.csv", "encoder.pide"):
        assert (tmp_path / name).exists()
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 4
    counts = (tmp_path / "counts.csv").read_text().splitlines()
    assert counts[0] == "epoch,total,class_0,class_1,class_2"
    epochs = {int(l.split(",")[0]) for l in (tmp_path / "snapshots.csv").read_text().splitlines()}
    assert epochs == {0, 2}
    assert len(res.records) == 3


def test_divergence_aborts_with_snapshot(tmp_path, scenario, monkeypatch):
    real = trainer_mod.joint_loss_and_grad

    def poisoned(*args, **kw):
        b, g = real(*args, **kw)
        return LossBreakdown(np.nan, b.proto_contra, np.nan), g

    monkeypatch.setattr(trainer_mod, "joint_loss_and_grad", poisoned)
    with pytest.raises(DivergenceError):
        full_train(small_cfg(epochs=2), scenario.X, scenario.y, out_dir=tmp_path)
    assert (tmp_path / "diverged_snapshot.csv").exists()


def test_encoder_step_uses_pre_ema_prototypes(scenario, monkeypatch):
    seen = []
    real = trainer_mod.joint_loss_and_grad

    def spy(z, labels, prototypes, assigns, cfg):
        seen.append([p.copy() for p in prototypes])
        return real(z, labels, prototypes, assigns, cfg)

    monkeypatch.setattr(trainer_mod, "joint_loss_and_grad", spy)
    cfg = small_cfg(epochs=1, batch_size=600)
    state = init_state(cfg, scenario.X.shape[1], 3)
    before = [p.copy() for p in state.protos.vectors]
    train_epoch(state, scenario.X, scenario.y, cfg)
    assert all(np.array_equal(a, b) for a, b in zip(seen[0], before))
    assert not all(np.array_equal(a, b) for a, b in zip(state.protos.vectors, before))
