"""MAP-EM training loop.

Per batch: embed, Sinkhorn + top-k assignment, an encoder gradient step against
the current prototypes, then the EMA prototype update. At the end of each epoch
the controller may split or remove prototypes; the next batch assigns against
the new set.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .assignment import DEFAULT_EPSILON, DEFAULT_ITERS, DEFAULT_K_TOP, assign_batch, hard_assign
from .controller import ControllerConfig, ControllerState, VarianceAccumulator, phase_at, step_controller
from .encoder import DivergenceError, MlpEncoder, SgdState, cosine_lr, sgd_step
from .objective import LossConfig, joint_loss_and_grad
from .prototypes import DEFAULT_ALPHA, PrototypeSet, ema_update, init_prototypes, write_snapshot

log = logging.getLogger(__name__)


@dataclass
class EncoderConfig:
    hidden: tuple = (64, 64)
    out_dim: int = 16

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.out_dim < 2 or any(h < 1 for h in self.hidden):
            raise ValueError("out_dim must be >= 2 and hidden widths >= 1")


@dataclass
class OptimConfig:
    lr: float = 0.05
    momentum: float = 0.9
    cosine_decay: bool = False

    def __post_init__(self):
        SgdState(self.lr, self.momentum)


@dataclass
class AssignConfig:
    epsilon: float = DEFAULT_EPSILON
    iters: int = DEFAULT_ITERS
    k_top: int = DEFAULT_K_TOP

    def __post_init__(self):
        if not self.epsilon > 0 or self.iters < 1 or self.k_top < 1:
            raise ValueError("need epsilon > 0, iters >= 1, k_top >= 1")


@dataclass
class PrototypeConfig:
    k_init: int = 6
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.k_init < 1 or not 0 <= self.alpha <= 1:
            raise ValueError("need k_init >= 1 and alpha in [0, 1]")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    seed: int = 0
    snapshot_every: int = 10
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    assign: AssignConfig = field(default_factory=AssignConfig)
    prototypes: PrototypeConfig = field(default_factory=PrototypeConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    mle: float
    proto_contra: float
    total_prototypes: int
    counts: list
    n_events: int

    def csv(self) -> str:
        counts = ";".join(str(k) for k in self.counts)
        return f"{self.epoch},{self.loss!r},{self.mle!r},{self.proto_contra!r},{self.total_prototypes},{counts},{self.n_events}"


TRAJECTORY_HEADER = "epoch,loss,mle,proto_contra,total_prototypes,counts,events"


@dataclass
class TrainState:
    encoder: MlpEncoder
    sgd: SgdState
    protos: PrototypeSet
    controller: ControllerState
    rng: np.random.Generator
    epoch: int = 0


@dataclass
class TrainResult:
    encoder: MlpEncoder
    protos: PrototypeSet
    records: list
    events: list


def init_state(cfg: TrainConfig, in_dim: int, n_classes: int) -> TrainState:
    root = np.random.default_rng(cfg.seed)
    enc_rng, proto_rng, data_rng = root.spawn(3)
    enc = MlpEncoder(in_dim, cfg.encoder.hidden, cfg.encoder.out_dim, rng=enc_rng)
    protos = init_prototypes(n_classes, cfg.prototypes.k_init, cfg.encoder.out_dim, proto_rng)
    state = ControllerState(phase=phase_at(cfg.controller, 0))
    return TrainState(enc, SgdState(cfg.optim.lr, cfg.optim.momentum), protos, state, data_rng)


def train_epoch(state: TrainState, X, y, cfg: TrainConfig) -> EpochRecord:
    epoch = state.epoch
    protos = state.protos
    n_classes = protos.n_classes
    acc = VarianceAccumulator(protos.counts(), protos.dim)
    lr = cosine_lr(cfg.optim.lr, epoch, cfg.epochs) if cfg.optim.cosine_decay else cfg.optim.lr

    order = state.rng.permutation(X.shape[0])
    sums = np.zeros(3)
    seen = 0
    for start in range(0, X.shape[0], cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        xb, yb = X[idx], y[idx]
        z, cache = state.encoder.forward(xb, return_cache=True)
        assigns = assign_batch(z, yb, protos.vectors, cfg.assign.epsilon, cfg.assign.iters, cfg.assign.k_top)

        version = protos.version
        breakdown, grad_z = joint_loss_and_grad(z, yb, protos.vectors, assigns, cfg.loss)
        if not np.isfinite(breakdown.total):
            raise DivergenceError(f"non-finite loss at epoch {epoch}, batch starting {start}")
        sgd_step(state.encoder, state.encoder.backward(cache, grad_z), state.sgd, lr)
        # the encoder step must have used the pre-EMA prototypes
        assert protos.version == version

        for c, a in assigns.items():
            if cfg.controller.weighted_variance:
                w = a.weights
            else:
                w = np.zeros_like(a.weights)
                w[np.arange(w.shape[0]), hard_assign(a)] = 1.0
            acc.add(c, z[a.sample_index], w)
        ema_update(protos, z, yb, assigns, cfg.prototypes.alpha)

        sums += len(idx) * np.array([breakdown.total, breakdown.mle, breakdown.proto_contra])
        seen += len(idx)

    events = step_controller(protos, acc, cfg.controller, state.controller, epoch)
    for c in range(n_classes):
        protos.ages[c] += 1
    state.epoch += 1
    loss, mle, pc = sums / max(seen, 1)
    return EpochRecord(epoch, float(loss), float(mle), float(pc), protos.total(), protos.counts(), len(events))


def full_train(cfg: TrainConfig, X, y, out_dir=None, n_classes: int | None = None) -> TrainResult:
    """Run the whole schedule. With `out_dir`, writes trajectory.csv, counts.csv,
    events.csv, snapshots.csv and encoder.pide there."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    state = init_state(cfg, X.shape[1], n_classes)
    records = []

    files = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name in ("trajectory", "counts", "events", "snapshots"):
            files[name] = open(os.path.join(out_dir, f"{name}.csv"), "w")
        files["trajectory"].write(TRAJECTORY_HEADER + "\n")
        files["counts"].write("epoch,total," + ",".join(f"class_{c}" for c in range(n_classes)) + "\n")
        files["events"].write("epoch,class,action,index,trigger,threshold\n")
    try:
        for _ in range(cfg.epochs):
            n_before = len(state.controller.events)
            try:
                rec = train_epoch(state, X, y, cfg)
            except DivergenceError:
                if out_dir is not None:
                    with open(os.path.join(out_dir, "diverged_snapshot.csv"), "w") as fh:
                        write_snapshot(fh, state.epoch, state.protos)
                raise
            records.append(rec)
            if files:
                files["trajectory"].write(rec.csv() + "\n")
                files["counts"].write(f"{rec.epoch},{rec.total_prototypes}," + ",".join(map(str, rec.counts)) + "\n")
                for ev in state.controller.events[n_before:]:
                    files["events"].write(ev.csv() + "\n")
                if rec.epoch % cfg.snapshot_every == 0 or rec.epoch == cfg.epochs - 1:
                    write_snapshot(files["snapshots"], rec.epoch, state.protos)
            log.debug("epoch %d loss %.4f counts %s", rec.epoch, rec.loss, rec.counts)
    finally:
        for fh in files.values():
            fh.close()
    if out_dir is not None:
        state.encoder.save(os.path.join(out_dir, "encoder.pide"))
    return TrainResult(state.encoder, state.protos, records, list(state.controller.events))
