"""Per-epoch view of the quantities the controller thresholds on.

For each epoch, recomputes hard-assignment cluster variances over the whole
training set and prints, per class, the largest ratio v_k / v_avg (births need
it above lambda_factor) and the smallest finite boundary score (deaths need it
below boundary_threshold), next to the MLE loss and current counts.

    python scripts/controller_diagnostics.py --seed 0 --every 10
"""
import argparse

import numpy as np

from pidproto.assignment import assign_batch, hard_assign
from pidproto.controller import boundary_score, phase_at
from pidproto.experiments import acceptance_config, make_scenario
from pidproto.trainer import init_state, train_epoch


def variance_ratios(state, X, y, cfg):
    z = state.encoder.forward(X)
    protos = state.protos
    assigns = assign_batch(z, y, protos.vectors, cfg.assign.epsilon, cfg.assign.iters, cfg.assign.k_top)
    out = []
    for c in range(protos.n_classes):
        a = assigns[c]
        members = hard_assign(a)
        zc = z[a.sample_index]
        v = []
        for k in range(protos.vectors[c].shape[0]):
            Z = zc[members == k]
            if Z.shape[0]:
                v.append(np.mean(np.sum((Z - Z.mean(axis=0)) ** 2, axis=1)))
        v = np.array(v)
        out.append(float(v.max() / v.mean()) if v.size and v.mean() > 0 else float("nan"))
    return out


def min_boundary(protos):
    out = []
    for c in range(protos.n_classes):
        if protos.vectors[c].shape[0] < 2:
            out.append(float("nan"))
            continue
        s = [boundary_score(c, k, protos.vectors) for k in range(protos.vectors[c].shape[0])]
        finite = [x for x in s if np.isfinite(x)]
        out.append(min(finite) if finite else float("inf"))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k-init", type=int, default=6)
    ap.add_argument("--epochs", type=int, default=220)
    ap.add_argument("--every", type=int, default=10)
    args = ap.parse_args()

    cfg = acceptance_config(args.seed, **{"prototypes.k_init": args.k_init, "epochs": args.epochs})
    sc = make_scenario(args.seed)
    state = init_state(cfg, sc.X.shape[1], 3)
    print(f"lambda_factor {cfg.controller.lambda_factor}, boundary_threshold {cfg.controller.boundary_threshold}")
    print("epoch,phase,mle,counts,max_var_ratio_per_class,min_boundary_per_class")
    for epoch in range(cfg.epochs):
        rec = train_epoch(state, sc.X, sc.y, cfg)
        if epoch % args.every == 0 or rec.n_events:
            ratios = " ".join(f"{r:.2f}" for r in variance_ratios(state, sc.X, sc.y, cfg))
            bounds = " ".join(f"{b:.3g}" for b in min_boundary(state.protos))
            print(f"{epoch},{phase_at(cfg.controller, epoch)},{rec.mle:.4f},{' '.join(map(str, rec.counts))},"
                  f"{ratios},{bounds}", flush=True)


if __name__ == "__main__":
    main()
