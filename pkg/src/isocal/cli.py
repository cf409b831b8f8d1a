"""Command-line surface: synth / train / eval / diagnose / ablate."""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import checkpoint, reports
from .data import SyntheticConfig, generate_narrow_cone, load_dataset, load_embeddings, save_dataset
from .spectra import class_similarity, pca_project, spectrum_stats
from .train import TrainConfig, evaluate, run_ablation, train
from .train import calibrate_rows

_SYNTH_FIELDS = {f.name: f.type for f in dataclasses.fields(SyntheticConfig)}


def _synth_config(args) -> SyntheticConfig:
    values: dict = {}
    if args.config:
        for key, raw in reports.read_config_file(args.config).items():
            if key not in _SYNTH_FIELDS:
                raise SystemExit(f"unknown synth config key {key!r}")
            values[key] = float(raw) if "float" in _SYNTH_FIELDS[key] else int(raw)
    for key in _SYNTH_FIELDS:
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    return SyntheticConfig(**values)


def _cmd_synth(args) -> None:
    dataset = generate_narrow_cone(_synth_config(args))
    save_dataset(dataset, args.out_emb, args.out_labels)
    print(f"wrote {dataset.n}x{dataset.d} embeddings to {args.out_emb}")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        variant=args.variant, K=args.k, learning_rate=args.lr,
        epochs=args.epochs, batch_size=args.batch, seed=args.seed,
        use_orth=not args.no_orth, use_ratio=not args.no_ratio,
        l2_weight=args.l2, distance_kind=args.distance,
        init_scheme=args.init, k_shot=args.k_shot, eps_ball=args.eps_ball,
        workers=args.workers,
        w_cls=args.w_cls, w_orth=args.w_orth,
        w_ratio=args.w_ratio, w_metric=args.w_metric)


def _spectrum_kv(spectrum) -> dict:
    return {f"spectrum_{k}": v for k, v in spectrum.as_dict().items()}


def _cmd_train(args) -> None:
    dataset = load_dataset(args.emb, args.labels)
    config = _train_config(args)
    head, anchors, report = train(config, dataset)
    if args.out_model:
        checkpoint.save_head(args.out_model, head, anchors)
    if args.report:
        last = report.history[-1]
        kv = {
            "variant": config.variant,
            "epochs": config.epochs,
            "n_train": report.n_train,
            "n_holdout": report.n_holdout,
            "final_cls": last.cls, "final_orth": last.orth,
            "final_ratio": last.ratio, "final_metric": last.metric,
            "final_total": last.total,
            "weighted_f1": report.final_f1,
            "accuracy": report.final_accuracy,
            "wall_clock_s": report.wall_clock_s,
        }
        kv.update(_spectrum_kv(report.spectrum))
        reports.write_kv_report(args.report, kv)
    print(f"{config.variant}: holdout weighted F1 = {report.final_f1:.4f}")


def _cmd_eval(args) -> None:
    dataset = load_dataset(args.emb, args.labels)
    head, _ = checkpoint.load_head(args.model)
    f1, acc, _ = evaluate(head, dataset)
    if args.report:
        reports.write_kv_report(args.report, {
            "n": dataset.n, "weighted_f1": f1, "accuracy": acc})
    print(f"weighted F1 = {f1:.4f}, accuracy = {acc:.4f}")


def _cmd_diagnose(args) -> None:
    values = load_embeddings(args.emb)
    source = "raw"
    if args.model:
        head, _ = checkpoint.load_head(args.model)
        values = calibrate_rows(head, values)
        source = "calibrated"
    spectrum = spectrum_stats(values)
    kv = {"n": values.shape[0], "d": values.shape[1], "source": source}
    kv.update(_spectrum_kv(spectrum))
    reports.write_kv_report(args.report, kv)
    if args.spectrum_csv:
        reports.write_csv(args.spectrum_csv, ["normalized_sv"],
                          spectrum.normalized_values[:, None])
    if args.pca_csv:
        proj = pca_project(values, components=2)
        reports.write_csv(args.pca_csv, ["pc1", "pc2"], proj)
    if args.heatmap_csv:
        if not args.labels:
            raise SystemExit("--heatmap-csv requires --labels")
        dataset = load_dataset(args.emb, args.labels)
        sim = class_similarity(dataset, values)
        header = [f"class_{f}" for f in range(sim.shape[0])]
        reports.write_csv(args.heatmap_csv, header, sim)
    print(f"diagnosed {source} embeddings: "
          f"token_uniformity = {spectrum.token_uniformity:.4f}")


def _cmd_ablate(args) -> None:
    dataset = load_dataset(args.emb, args.labels)
    config = TrainConfig(
        variant="full", K=args.k, seed=args.seed,
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch,
        l2_weight=args.l2, distance_kind=args.distance,
        init_scheme=args.init, k_shot=args.k_shot)
    results = run_ablation(config, dataset)
    reports.write_kv_report(args.report, {f"f1_{name}": f1 for name, f1 in results})
    for name, f1 in results:
        print(f"{name}: weighted F1 = {f1:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isocal",
        description="Embedding-space calibration, hyperbolic coarse-to-fine "
                    "metric learning, and spectrum diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a narrow-cone synthetic dataset")
    p.add_argument("--config", help="key=value file with SyntheticConfig fields")
    p.add_argument("--out-emb", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--d", type=int)
    p.add_argument("--C", type=int)
    p.add_argument("--F", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--cone-axis-scale", dest="cone_axis_scale", type=float)
    p.add_argument("--cone-noise", dest="cone_noise", type=float)
    p.add_argument("--coarse-sep", dest="coarse_sep", type=float)
    p.add_argument("--fine-sep", dest="fine_sep", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a calibration head")
    p.add_argument("--emb", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--variant", default="full",
                   choices=["baseline", "tara", "tml", "full"])
    p.add_argument("--k", type=int, default=16, help="transform directions K")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-orth", action="store_true")
    p.add_argument("--no-ratio", action="store_true")
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--distance", default="hyperbolic",
                   choices=["hyperbolic", "euclidean"])
    p.add_argument("--init", default="gaussian",
                   choices=["gaussian", "xavier", "eye", "orthogonal"])
    p.add_argument("--k-shot", dest="k_shot", type=int)
    p.add_argument("--eps-ball", dest="eps_ball", type=float, default=1e-5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--w-cls", dest="w_cls", type=float, default=1.0)
    p.add_argument("--w-orth", dest="w_orth", type=float, default=1.0)
    p.add_argument("--w-ratio", dest="w_ratio", type=float, default=1.0)
    p.add_argument("--w-metric", dest="w_metric", type=float, default=1.0)
    p.add_argument("--out-model")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved head on a dataset")
    p.add_argument("--emb", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("diagnose", help="spectrum diagnostics on raw or calibrated embeddings")
    p.add_argument("--emb", required=True)
    p.add_argument("--model", help="run on calibrated outputs of this head")
    p.add_argument("--report", required=True)
    p.add_argument("--pca-csv", dest="pca_csv")
    p.add_argument("--heatmap-csv", dest="heatmap_csv")
    p.add_argument("--labels", help="needed for --heatmap-csv")
    p.add_argument("--spectrum-csv", dest="spectrum_csv")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("ablate", help="loss-term ablation table for the full variant")
    p.add_argument("--emb", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--distance", default="hyperbolic",
                   choices=["hyperbolic", "euclidean"])
    p.add_argument("--init", default="gaussian",
                   choices=["gaussian", "xavier", "eye", "orthogonal"])
    p.add_argument("--k-shot", dest="k_shot", type=int)
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
