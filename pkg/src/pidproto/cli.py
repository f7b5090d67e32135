"""Command-line entry points: generate, train, eval, inspect.

Exit status: 0 on success, 2 on validation errors, 1 on runtime failures.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys

import numpy as np

from .config import ABLATIONS, ConfigError, apply_ablation, config_hash, dump_config, load_config, override
from .datagen import DumpFormatError, LabelError, default_spec, generate_id, generate_ood, load_embeddings, save_embeddings
from .encoder import MlpEncoder
from .prototypes import write_snapshot
from .scoring import MetricsReport, SingularCovarianceError, calibrate, compute_metrics, fit_score_model, mahalanobis_score
from .trainer import TrainConfig, full_train

log = logging.getLogger("pidproto")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


class ValidationError(Exception):
    pass


# -- generate -------------------------------------------------------------------

GEN_DEFAULTS = {
    "subclusters": "1,2,4",
    "dim": "16",
    "kappa": "50",
    "samples_per_class": "600",
    "test_per_class": "300",
    "sub_angle_deg": "60",
    "lift_dim": "0",
    "lift_noise": "0.05",
    "ood.n": "1000",
    "ood.kinds": "uniform_sphere,held_out_vmf",
    "ood.clusters": "4",
    "ood.kappa": "50",
    "ood.min_angle_deg": "30",
    "ood.max_angle_deg": "45",
}


def parse_gen_spec(text: str) -> dict:
    values = dict(GEN_DEFAULTS)
    seen = set()
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {i}: expected 'key = value', got {raw.strip()!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in GEN_DEFAULTS:
            raise ValidationError(f"line {i}: unknown key {key!r}")
        if key in seen:
            raise ValidationError(f"line {i}: duplicate key {key!r}")
        seen.add(key)
        values[key] = value
        try:
            _typed_gen(values)
        except ValueError as exc:
            raise ValidationError(f"line {i}: {key}: {exc}") from None
    return _typed_gen(values)


def _typed_gen(v: dict) -> dict:
    out = {
        "subclusters": tuple(int(t) for t in v["subclusters"].split(",")),
        "dim": int(v["dim"]),
        "kappa": float(v["kappa"]),
        "samples_per_class": int(v["samples_per_class"]),
        "test_per_class": int(v["test_per_class"]),
        "sub_angle_deg": float(v["sub_angle_deg"]),
        "lift_dim": int(v["lift_dim"]),
        "lift_noise": float(v["lift_noise"]),
        "ood.n": int(v["ood.n"]),
        "ood.kinds": tuple(t.strip() for t in v["ood.kinds"].split(",") if t.strip()),
        "ood.clusters": int(v["ood.clusters"]),
        "ood.kappa": float(v["ood.kappa"]),
        "ood.min_angle_deg": float(v["ood.min_angle_deg"]),
        "ood.max_angle_deg": float(v["ood.max_angle_deg"]),
    }
    if any(m < 1 for m in out["subclusters"]):
        raise ValueError("every class needs at least one sub-cluster")
    if out["dim"] < 2 or out["kappa"] < 0 or out["samples_per_class"] < 2 or out["test_per_class"] < 1:
        raise ValueError("need dim >= 2, kappa >= 0, samples_per_class >= 2, test_per_class >= 1")
    bad = set(out["ood.kinds"]) - {"uniform_sphere", "held_out_vmf"}
    if bad:
        raise ValueError(f"unknown OOD kinds {sorted(bad)}")
    return out


def cmd_generate(args) -> int:
    if args.spec:
        if not os.path.exists(args.spec):
            raise ValidationError(f"spec file not found: {args.spec}")
        with open(args.spec) as fh:
            gen = parse_gen_spec(fh.read())
    else:
        gen = parse_gen_spec("")
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    spec = default_spec(rng, gen["subclusters"], gen["dim"], gen["kappa"], gen["samples_per_class"],
                        gen["sub_angle_deg"], gen["lift_dim"] or None, gen["lift_noise"])
    C = spec.n_classes
    X, y, sub = generate_id(spec, rng)
    Xt, yt, _ = generate_id(spec, rng, n_per_class=gen["test_per_class"])
    written = []
    save_embeddings(os.path.join(args.out, "id_train.csv"), X, y, C)
    save_embeddings(os.path.join(args.out, "id_test.csv"), Xt, yt, C)
    with open(os.path.join(args.out, "id_train_subclusters.txt"), "w") as fh:
        fh.write("".join(f"{int(s)}\n" for s in sub))
    written += ["id_train.csv", "id_test.csv", "id_train_subclusters.txt"]
    for kind in gen["ood.kinds"]:
        O = generate_ood(kind, gen["ood.n"], spec.dim, rng, spec=spec, n_clusters=gen["ood.clusters"],
                         kappa=gen["ood.kappa"], min_angle_deg=gen["ood.min_angle_deg"],
                         max_angle_deg=gen["ood.max_angle_deg"])
        name = f"ood_{kind}.csv"
        save_embeddings(os.path.join(args.out, name), O, np.full(O.shape[0], -1), C)
        written.append(name)
    for name in written:
        print(os.path.join(args.out, name))
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def _load_id(path):
    if not os.path.exists(path):
        raise ValidationError(f"data file not found: {path}")
    return load_embeddings(path)


def _run_id(cfg_text: str, data_path: str) -> str:
    h = hashlib.sha1(cfg_text.encode())
    with open(data_path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()[:12]


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = override(cfg, seed=args.seed)
    cfg = apply_ablation(cfg, args.ablation)
    X, y = _load_id(args.train)
    with open(args.train) as fh:
        n_classes = int(fh.readline().split(",")[2])
    os.makedirs(args.out, exist_ok=True)
    text = dump_config(cfg)
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(text)
    result = full_train(cfg, X, y, out_dir=args.out, n_classes=n_classes)
    with open(os.path.join(args.out, "prototypes_final.csv"), "w") as fh:
        write_snapshot(fh, cfg.epochs - 1, result.protos)
    manifest = {
        "run_id": _run_id(text, args.train),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "ablation": args.ablation or "none",
        "train_data": os.path.abspath(args.train),
        "out_dir": os.path.abspath(args.out),
        "epochs": cfg.epochs,
        "final_counts": ",".join(map(str, result.protos.counts())),
    }
    with open(os.path.join(args.out, "manifest.txt"), "w") as fh:
        fh.write("".join(f"{k} = {v}\n" for k, v in manifest.items()))
    print(f"run {manifest['run_id']}: final prototype counts {manifest['final_counts']}, "
          f"{len(result.events)} controller events")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

def read_manifest(run_dir) -> dict:
    path = os.path.join(run_dir, "manifest.txt")
    if not os.path.exists(path):
        raise ValidationError(f"{run_dir} is not a completed run (no manifest.txt)")
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, v = (t.strip() for t in line.split("=", 1))
                out[k] = v
    return out


def cmd_eval(args) -> int:
    manifest = read_manifest(args.run)
    enc = MlpEncoder.load(os.path.join(args.run, "encoder.pide"))
    X, y = _load_id(manifest["train_data"])
    Xt, _ = _load_id(args.id_test)
    for path, M in (("train", X), (args.id_test, Xt)):
        if M.shape[1] != enc.in_dim:
            raise ValidationError(f"{path}: data dim {M.shape[1]} does not match checkpoint input dim {enc.in_dim}")
    embed = enc.features if args.features == "penultimate" else enc.forward
    model = fit_score_model(embed(X), y, args.shrinkage)
    id_scores = mahalanobis_score(model, embed(Xt))
    calibrate(model, id_scores)

    rows, reports = [], []
    for path in args.ood:
        if not os.path.exists(path):
            raise ValidationError(f"OOD file not found: {path}")
        try:
            O, _ = load_embeddings(path, allow_ood=True)
        except LabelError:
            # an ID file used as an OOD set (e.g. the ID-vs-ID sanity check)
            O, _ = load_embeddings(path)
        if O.shape[1] != enc.in_dim:
            raise ValidationError(f"{path}: data dim {O.shape[1]} does not match checkpoint input dim {enc.in_dim}")
        rep = compute_metrics(id_scores, mahalanobis_score(model, embed(O)))
        name = os.path.splitext(os.path.basename(path))[0]
        rows.append((name, rep))
        reports.append(rep)
    avg = MetricsReport(*(float(np.mean([getattr(r, f) for r in reports])) for f in ("fpr_at_95", "auroc", "aupr")))
    rows.append(("average", avg))

    with open(os.path.join(args.run, "metrics.csv"), "w") as fh:
        fh.write("dataset,fpr95,auroc,aupr\n")
        fh.write("".join(rep.as_row(name) + "\n" for name, rep in rows))
    with open(os.path.join(args.run, "metrics.txt"), "w") as fh:
        fh.write(f"threshold = {model.threshold!r}\n")
        fh.write("\n".join(rep.as_text(name) for name, rep in rows))
    print("dataset,fpr95,auroc,aupr")
    for name, rep in rows:
        print(rep.as_row(name))
    return EXIT_OK


# -- inspect --------------------------------------------------------------------

def cmd_inspect(args) -> int:
    manifest = read_manifest(args.run)
    need = ["counts.csv", "events.csv", "trajectory.csv"]
    missing = [n for n in need if not os.path.exists(os.path.join(args.run, n))]
    if missing:
        raise ValidationError(f"{args.run}: incomplete run, missing {', '.join(missing)}")
    with open(os.path.join(args.run, "counts.csv")) as fh:
        header = fh.readline().strip()
        counts = [line.strip().split(",") for line in fh if line.strip()]
    with open(os.path.join(args.run, "events.csv")) as fh:
        fh.readline()
        events = [line.strip().split(",") for line in fh if line.strip()]
    births = sum(e[2] == "birth" for e in events)
    deaths = sum(e[2] == "death" for e in events)
    final = [int(t) for t in counts[-1][2:]]
    print(f"run {manifest.get('run_id', '?')} ({len(counts)} epochs, ablation {manifest.get('ablation', 'none')})")
    print(f"{births} birth, {deaths} death")
    for e in events:
        print(f"  epoch {e[0]}: class {e[1]} {e[3]} {e[2]} (trigger {float(e[4]):.4g}, threshold {float(e[5]):.4g})")
    print(f"final per-class K: {' '.join(map(str, final))} (total {sum(final)})")
    print("# count trajectory")
    print(header)
    for row in counts:
        print(",".join(row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pidproto", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic ID train/test and OOD dumps")
    g.add_argument("--spec", help="generator spec file (key = value)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="run the full training schedule")
    t.add_argument("--config", help="training config file (section.key = value)")
    t.add_argument("--train", required=True, help="ID training dump")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", choices=ABLATIONS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="Mahalanobis OOD metrics for a trained run")
    e.add_argument("run", help="run directory")
    e.add_argument("--id-test", required=True)
    e.add_argument("--ood", action="append", required=True, help="OOD dump (repeatable)")
    e.add_argument("--features", choices=("penultimate", "embedding"), default="penultimate")
    e.add_argument("--shrinkage", type=float, default=0.05)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="summarize a run's prototype dynamics")
    i.add_argument("run")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ConfigError, DumpFormatError, SingularCovarianceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(exc, (FileNotFoundError, PermissionError, NotADirectoryError)) else EXIT_RUNTIME
    except Exception as exc:  # runtime failure, e.g. divergence
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
