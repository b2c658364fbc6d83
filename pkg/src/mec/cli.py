"""Command-line surface: bench, verify, train, probe, export-embeddings.

Exit codes: 0 on success, 1 when an acceptance gate or identity check
fails, 2 for usage, config, or input errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import baselines, bench, configfile, data as datamod, encoder, trainer, verify
from .configfile import ConfigError
from .matkernel import CodingConfig, MatrixError
from .objective import DivergenceError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mec",
        description="Coding-length objective kernels, training harness, and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="output path (or directory)")
        p.add_argument("--dry-run", action="store_true",
                       help="validate configuration, print the resolved plan, exit 0")

    p_bench = sub.add_parser("bench", help="time exact vs truncated log-determinant")
    common(p_bench)

    p_verify = sub.add_parser("verify", help="run the identity and guard suites")
    common(p_verify)

    p_train = sub.add_parser("train", help="run the Siamese training loop")
    common(p_train)

    p_probe = sub.add_parser("probe", help="kNN-probe saved encoder parameters")
    common(p_probe)
    p_probe.add_argument("--params", type=Path, required=True, help="MEC1 parameter file")

    p_export = sub.add_parser("export-embeddings",
                              help="write backbone features of a dataset to CSV")
    common(p_export)
    p_export.add_argument("--params", type=Path, required=True, help="MEC1 parameter file")
    return parser


def _bench_config(cfg: dict, seed: int | None) -> bench.BenchConfig:
    kwargs = {}
    mapping = {
        "bench.dims": "dims", "bench.orders": "orders", "bench.eps_d_sq": "eps_d_sq",
        "bench.embed_dim": "embed_dim", "bench.repetitions": "repetitions",
        "bench.warmup_reps": "warmup_reps", "bench.seed": "seed",
    }
    for key, attr in mapping.items():
        if key in cfg:
            kwargs[attr] = cfg[key]
    if seed is not None:
        kwargs["seed"] = seed
    try:
        return bench.BenchConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _train_config(cfg: dict, seed: int | None) -> trainer.TrainConfig:
    baseline_kwargs = {}
    for key, attr in (("baseline.kind", "kind"), ("baseline.temperature", "temperature"),
                      ("baseline.lambda_barlow", "lambda_barlow"),
                      ("baseline.normalization", "normalization")):
        if key in cfg:
            baseline_kwargs[attr] = cfg[key]
    aug_kwargs = {}
    if "augment.sigma" in cfg:
        aug_kwargs["sigma"] = cfg["augment.sigma"]
    if "augment.p_mask" in cfg:
        aug_kwargs["p_mask"] = cfg["augment.p_mask"]
    if "augment.jitter_lo" in cfg or "augment.jitter_hi" in cfg:
        aug_kwargs["jitter"] = (cfg.get("augment.jitter_lo", 0.8),
                                cfg.get("augment.jitter_hi", 1.2))
    kwargs = {}
    mapping = {
        "train.loss": "loss", "train.batch_size": "batch_size",
        "train.embed_dim": "embed_dim", "train.feat_dim": "feat_dim",
        "train.hidden_dims": "hidden_dims", "train.proj_hidden": "proj_hidden",
        "train.pred_hidden": "pred_hidden", "train.epochs": "epochs",
        "train.base_lr": "base_lr", "train.warmup_epochs": "warmup_epochs",
        "train.sgd_momentum": "sgd_momentum", "train.weight_decay": "weight_decay",
        "train.ema_momentum": "ema_momentum", "train.symmetric": "symmetric",
        "train.seed": "seed", "train.knn_k": "knn_k",
        "mec.eps_d_sq": "eps_d_sq", "mec.order": "order", "mec.form": "mec_form",
        "mec.exact": "mec_exact", "mec.normalize_by_mu": "normalize_by_mu",
        "mec.lambda_warmup": "lambda_warmup", "composite.reg_weight": "reg_weight",
    }
    for key, attr in mapping.items():
        if key in cfg:
            kwargs[attr] = cfg[key]
    if baseline_kwargs:
        kwargs["baseline"] = baselines.BaselineConfig(**baseline_kwargs)
    if aug_kwargs:
        kwargs["augment"] = trainer.AugmentPolicy(**aug_kwargs)
    if seed is not None:
        kwargs["seed"] = seed
    try:
        return trainer.TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _dataset(cfg: dict) -> datamod.DatasetHandle:
    kind = cfg.get("data.kind", "synthetic")
    if kind == "csv":
        if "data.path" not in cfg:
            raise ConfigError("data.kind = csv requires data.path")
        return datamod.load_csv(cfg["data.path"])
    if kind == "cifar10":
        if "data.path" not in cfg:
            raise ConfigError("data.kind = cifar10 requires data.path")
        return datamod.load_cifar10_bin(cfg["data.path"])
    spec_kwargs = {}
    for key, attr in (("data.num_clusters", "num_clusters"), ("data.input_dim", "input_dim"),
                      ("data.per_cluster", "per_cluster"), ("data.center_scale", "center_scale"),
                      ("data.sigma", "sigma"), ("data.seed", "seed")):
        if key in cfg:
            spec_kwargs[attr] = cfg[key]
    try:
        return datamod.gen_synthetic(datamod.SyntheticSpec(**spec_kwargs))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_encoder(args, cfg: dict, input_dim: int) -> encoder.EncoderParams:
    tcfg = _train_config(cfg, seed=None)
    arch = tcfg.arch(input_dim)
    return encoder.load_params(args.params, arch.backbone, arch.projector)


def _cmd_bench(args, cfg: dict) -> int:
    bcfg = _bench_config(cfg, args.seed)
    if args.dry_run:
        print(f"bench plan: dims={list(bcfg.dims)} orders={list(bcfg.orders)} "
              f"eps_d_sq={bcfg.eps_d_sq} embed_dim={bcfg.embed_dim} "
              f"repetitions={bcfg.repetitions} warmup={bcfg.warmup_reps} seed={bcfg.seed}")
        return EXIT_OK
    rows = bench.run_bench(bcfg)
    csv_text = bench.format_csv(rows)
    if args.out is not None:
        Path(args.out).write_text(csv_text)
        stub = Path(args.out).with_name(Path(args.out).stem + "_plot.py")
        bench.write_plot_stub(args.out, stub)
        print(f"wrote {args.out} and {stub}")
    else:
        sys.stdout.write(csv_text)
    bad = bench.gate_failures(rows)
    for row in bad:
        print(f"FAIL dim {row.dim}: order-4 relative error {row.rel_err:.3e} >= "
              f"{bench.REL_ERR_GATE}", file=sys.stderr)
    return EXIT_FAIL if bad else EXIT_OK


def _cmd_verify(args, cfg: dict) -> int:
    if args.dry_run:
        print("verify plan: duality, norm-guard, first-order, second-order, gradient suites")
        return EXIT_OK
    rows = verify.run_all()
    table = verify.format_table(rows)
    print(table)
    if args.out is not None:
        Path(args.out).write_text(table + "\n")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL


def _cmd_train(args, cfg: dict) -> int:
    tcfg = _train_config(cfg, args.seed)
    if args.dry_run:
        coding = tcfg.coding(tcfg.batch_size)
        print(f"loss={tcfg.loss} batch={tcfg.batch_size} embed_dim={tcfg.embed_dim} "
              f"epochs={tcfg.epochs} lr={tcfg.scaled_lr:g} (base {tcfg.base_lr:g})")
        print(f"mu={coding.mu:g} lambda={coding.lam:.6g} "
              f"worst-case norm bound lambda*m={coding.lam_m:.6g}")
        return EXIT_OK
    handle = _dataset(cfg)
    out_dir = Path(args.out) if args.out is not None else Path("mec_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    params, log = trainer.train(tcfg, handle)
    metrics_path = out_dir / "metrics.csv"
    params_path = out_dir / "encoder.mec"
    trainer.write_metrics_csv(log, metrics_path)
    params.save(params_path)
    final = log[-1]
    print(f"wrote {metrics_path} and {params_path}")
    print(f"final kNN accuracy: {final['knn_acc']:.4f}")
    print(f"collapse report: effective_rank={final['effective_rank']:.2f} "
          f"coding_length={final['coding_length']:.4f}")
    return EXIT_OK


def _cmd_probe(args, cfg: dict) -> int:
    if args.dry_run:
        print(f"probe plan: params={args.params} k={cfg.get('probe.k', 20)}")
        return EXIT_OK
    handle = _dataset(cfg)
    params = _load_encoder(args, cfg, handle.input_dim)
    k = int(cfg.get("probe.k", 20))
    acc = trainer.knn_probe(params, handle.train, handle.eval, k)
    print(f"knn accuracy (k={k}): {acc:.4f}")
    return EXIT_OK


def _cmd_export(args, cfg: dict) -> int:
    if args.dry_run:
        print(f"export plan: params={args.params} out={args.out}")
        return EXIT_OK
    handle = _dataset(cfg)
    # load_params validates every tensor shape against the dataset's input
    # dimension, so a params/dataset mismatch surfaces as ParamsFormatError.
    params = _load_encoder(args, cfg, handle.input_dim)
    feats = encoder.backbone_features(params, handle.samples)
    lines = ["id,label," + ",".join(f"e{i}" for i in range(feats.shape[1]))]
    for i, (label, row) in enumerate(zip(handle.labels, feats)):
        lines.append(f"{i},{int(label)}," + ",".join(f"{v:.17g}" for v in row))
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


_COMMANDS = {
    "bench": _cmd_bench,
    "verify": _cmd_verify,
    "train": _cmd_train,
    "probe": _cmd_probe,
    "export-embeddings": _cmd_export,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = configfile.load_config(args.config) if args.config is not None else {}
        return _COMMANDS[args.command](args, cfg)
    except (ConfigError, FileNotFoundError, datamod.DataFormatError,
            encoder.ParamsFormatError, MatrixError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, trainer.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
