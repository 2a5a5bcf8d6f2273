"""Command-line surface: gen, train, eval, gradcheck, ablate.

Exit codes: 0 success, 1 check failure, 2 configuration error (also
missing/mismatched checkpoints), 3 I/O or dataset failure, 4 numeric
failure. Every run echoes its effective config into the output
directory; identical seeds and configs reproduce every artifact
byte-for-byte.

The only environment override is AFFECTSEQ_THREADS, which parallelizes
the ablation sweep across worker processes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import aggregator as agg
from . import data, metrics, training, verification
from .autodiff import GraphError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, build_config

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

SUBSET_ORDER = ("va", "expr", "au", "va+expr", "va+au", "expr+au", "all")

_DEFAULTS = RunConfig()


def _add_config_flags(sub):
    sub.add_argument("--config", dest="config_file", metavar="PATH", default=None,
                     help="JSON config file; flags override file values")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(_DEFAULTS, f.name)
        if isinstance(default, bool):
            sub.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                             default=None)
        elif isinstance(default, int):
            sub.add_argument(flag, dest=f.name, type=int, default=None)
        elif isinstance(default, float):
            sub.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            sub.add_argument(flag, dest=f.name, type=str, default=None)


def _config_from_args(args):
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(RunConfig)
        if getattr(args, f.name, None) is not None
    }
    return build_config(config_file=args.config_file, overrides=overrides)


def _out_dir(config):
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    config.echo(out)
    return out


def _load_videos(config, expect_kind="videos"):
    if not config.dataset:
        raise ConfigError("--dataset is required")
    samples, manifest = data.load_dataset(config.dataset)
    if manifest.kind != expect_kind:
        raise ConfigError(f"dataset kind {manifest.kind!r}, expected {expect_kind!r}")
    return samples, manifest


def _split_from_config(samples, config):
    return data.split(samples, config.parse_fractions(), config.seed)


# ---------------------------------------------------------------------------
# gen


def cmd_gen(config):
    out = _out_dir(config)
    if config.gen_kind == "videos":
        samples, manifest = data.gen_video_dataset(
            config.seed, config.n, config.video_recipe(), config.t
        )
    else:
        samples, manifest = data.gen_frame_dataset(config.seed, config.n, config.frame_recipe())
    path = out / f"{config.gen_kind}.jsonl"
    data.save_dataset(path, samples, manifest)
    print(f"wrote {len(samples)} {config.gen_kind} to {path}")
    print(f"manifest {data.manifest_path(path)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _aggregator_config_for(config, samples):
    width = samples[0].frames.shape[1]
    return config.aggregator_config(d_in=width)


def _prepare_video_splits(config, manifest, parts):
    """Column-select affect videos; run a frozen head over descriptors."""
    if manifest.recipe.get("feature_kind", "affect") == "descriptor":
        if not config.head_checkpoint:
            raise ConfigError(
                "descriptor videos need --head-checkpoint for feature extraction"
            )
        ck = load_checkpoint(config.head_checkpoint)
        if ck.kind != "head":
            raise CheckpointError(f"expected a head checkpoint, got kind {ck.kind!r}")
        head_config = _head_config_from(ck)
        parts = {
            name: training.transform_videos(part, ck.params, head_config)
            for name, part in parts.items()
        }
    if config.representation != "all":
        parts = {
            name: data.select_columns(part, config.representation)
            for name, part in parts.items()
        }
    return parts


def _head_config_from(ck):
    blob = {k: v for k, v in ck.config.items() if k in {f.name for f in fields(RunConfig)}}
    return RunConfig(**blob).head_config()


def _check_param_shapes(params, expected_shapes, context):
    for name, shape in expected_shapes.items():
        if name not in params:
            raise CheckpointError(f"{context}: checkpoint lacks parameter {name!r}")
        if tuple(params[name].shape) != tuple(shape):
            raise CheckpointError(
                f"{context}: parameter {name!r} has shape {tuple(params[name].shape)}, "
                f"config implies {tuple(shape)}"
            )


def _checkpoint_config(config):
    # the output directory is run bookkeeping, not model provenance;
    # embedding it would make otherwise-identical checkpoints differ
    blob = config.to_dict()
    blob.pop("out", None)
    return blob


def _write_curves(out, history, series):
    training.write_curve_csv(out / "curve.csv", history)
    training.write_curve_svg(out / "curve.svg", history, series=series)


def cmd_train(config):
    out = _out_dir(config)
    if config.stage == "mma":
        samples, _ = _load_videos(config, expect_kind="frames")
        parts = _split_from_config(samples, config)
        head_config = config.head_config()
        outcome = training.train_head(
            parts["train"], parts["val"], head_config,
            epochs=config.epochs, batch_size=config.batch_size,
            lr=config.lr, seed=config.seed,
        )
        save_checkpoint(out / "checkpoint.json", outcome.params, _checkpoint_config(config), "head")
        _write_curves(out, outcome.history, ("train_loss", "val_loss"))
        print(f"best epoch {outcome.best_epoch} val_loss {outcome.best_metric:.6f}")
    elif config.stage == "mrnn-frozen":
        samples, manifest = _load_videos(config)
        parts = _prepare_video_splits(config, manifest, _split_from_config(samples, config))
        agg_config = _aggregator_config_for(config, parts["train"])
        init = None
        if config.checkpoint:
            ck = load_checkpoint(config.checkpoint)
            _check_param_shapes(ck.params, agg_config.param_shapes(), "aggregator init")
            init = ck.params
        outcome = training.train_aggregator(
            parts["train"], parts["val"], agg_config,
            epochs=config.epochs, batch_size=config.batch_size,
            lr=config.lr, loss_kind=config.loss, seed=config.seed, init_params=init,
        )
        save_checkpoint(out / "checkpoint.json", outcome.params, _checkpoint_config(config), "aggregator")
        _write_curves(out, outcome.history, ("train_loss", "val_mean_rho"))
        print(f"best epoch {outcome.best_epoch} val_mean_rho {outcome.best_metric:.6f}")
    else:  # end-to-end
        samples, manifest = _load_videos(config)
        if manifest.recipe.get("feature_kind") != "descriptor":
            raise ConfigError("end-to-end training expects descriptor videos")
        parts = _split_from_config(samples, config)
        head_config = config.head_config()
        agg_config = config.aggregator_config(d_in=26)
        init_head = init_agg = None
        if config.head_checkpoint:
            ck = load_checkpoint(config.head_checkpoint)
            _check_param_shapes(ck.params, head_config.param_shapes(), "head init")
            init_head = ck.params
        if config.checkpoint:
            ck = load_checkpoint(config.checkpoint)
            _check_param_shapes(ck.params, agg_config.param_shapes(), "aggregator init")
            init_agg = ck.params
        outcome = training.train_joint(
            parts["train"], parts["val"], head_config, agg_config,
            epochs=config.epochs, batch_size=config.batch_size, lr=config.lr,
            loss_kind=config.loss, seed=config.seed,
            init_head=init_head, init_agg=init_agg,
        )
        save_checkpoint(out / "checkpoint.json", outcome.params, _checkpoint_config(config), "joint")
        _write_curves(out, outcome.history, ("train_loss", "val_mean_rho"))
        print(f"best epoch {outcome.best_epoch} val_mean_rho {outcome.best_metric:.6f}")
    print(f"checkpoint {out / 'checkpoint.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(config):
    out = _out_dir(config)
    if not config.checkpoint:
        raise ConfigError("--checkpoint is required")
    ck = load_checkpoint(config.checkpoint)
    samples, manifest = _load_videos(config)
    part = _split_from_config(samples, config)[config.split]
    stored = {k: v for k, v in ck.config.items() if k in {f.name for f in fields(RunConfig)}}
    run = RunConfig(**stored)
    if ck.kind == "aggregator":
        if manifest.recipe.get("feature_kind", "affect") == "descriptor":
            if not config.head_checkpoint:
                raise ConfigError("descriptor videos need --head-checkpoint")
            hck = load_checkpoint(config.head_checkpoint)
            part = training.transform_videos(part, hck.params, _head_config_from(hck))
        if run.representation != "all":
            part = data.select_columns(part, run.representation)
        agg_config = run.aggregator_config(d_in=part[0].frames.shape[1])
        _check_param_shapes(ck.params, agg_config.param_shapes(), "eval")
        preds = agg.predict(part, ck.params, agg_config)
    elif ck.kind == "joint":
        head_config = run.head_config()
        agg_config = run.aggregator_config(d_in=26)
        head_names = set(head_config.param_shapes())
        hp = {k: v for k, v in ck.params.items() if k in head_names}
        ap = {k: v for k, v in ck.params.items() if k not in head_names}
        _check_param_shapes(hp, head_config.param_shapes(), "eval")
        _check_param_shapes(ap, agg_config.param_shapes(), "eval")
        preds = training.joint_predict(part, hp, head_config, ap, agg_config)
    else:
        raise ConfigError(f"eval needs an aggregator or joint checkpoint, got {ck.kind!r}")
    labels = np.asarray([s.label for s in part])
    report = metrics.evaluate(preds, labels, "intensity")
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    for name, value in report.per_class.items():
        print(f"{name} {report.as_percent(value)}")
    print(report.as_percent(report.mean))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(config, epsilon=1e-6, inject_fault=False):
    out = _out_dir(config)
    if inject_fault:
        with verification.corrupted_backward():
            reports, failures, elapsed = verification.run_all(epsilon=epsilon)
    else:
        reports, failures, elapsed = verification.run_all(epsilon=epsilon)
    blob = {
        "schema_version": "1",
        "epsilon": epsilon,
        "threshold": verification.THRESHOLD,
        "elapsed_seconds": elapsed,
        "targets": {name: r.to_dict() for name, r in reports.items()},
        "failures": [
            {"target": name, "max_rel_error": err, "parameters": params}
            for name, err, params in failures
        ],
    }
    (out / "gradient_report.json").write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")
    for name, report in reports.items():
        status = "ok" if report.passed(verification.THRESHOLD) else "FAIL"
        print(f"{name:28s} max_rel_error {report.max_rel_error:.3e}  {status}")
        for warning in report.warnings:
            print(f"  warning: {warning}")
    print(f"gradient check finished in {elapsed:.2f}s")
    if failures:
        for name, err, params in failures:
            print(
                f"FAIL {name}: max rel error {err:.3e} in {', '.join(params)}",
                file=sys.stderr,
            )
        return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate


def _ablate_variant(args):
    (subset, mask_on, loss_kind, train_samples, val_samples, config_blob) = args
    config = RunConfig(**config_blob)
    train_s = data.select_columns(train_samples, subset)
    val_s = data.select_columns(val_samples, subset)
    agg_config = agg.AggregatorConfig(
        d_in=train_s[0].frames.shape[1],
        t=config.t,
        d_hidden=config.d_hidden,
        d_ff=config.d_ff,
        gru_layers=config.gru_layers,
        mask_enabled=mask_on,
        sigmoid_output=config.sigmoid_output,
    )
    outcome = training.train_aggregator(
        train_s, val_s, agg_config,
        epochs=config.epochs, batch_size=config.batch_size,
        lr=config.lr, loss_kind=loss_kind, seed=config.seed,
    )
    return {
        "representation": subset,
        "mask": "on" if mask_on else "off",
        "loss": loss_kind,
        "val_mean_rho_percent": f"{100.0 * outcome.best_metric:.2f}",
    }


def cmd_ablate(config):
    out = _out_dir(config)
    samples, manifest = _load_videos(config)
    if manifest.d != 26 or manifest.recipe.get("feature_kind", "affect") != "affect":
        raise ConfigError("ablation needs a full 26-dim affect video dataset")
    parts = _split_from_config(samples, config)
    config_blob = config.to_dict()
    config_blob.pop("schema_version", None)
    variants = [
        (subset, mask_on, loss_kind, parts["train"], parts["val"], config_blob)
        for subset in SUBSET_ORDER
        for mask_on in (True, False)
        for loss_kind in ("pearson", "mse")
    ]
    threads = int(os.environ.get("AFFECTSEQ_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_ablate_variant, variants))
    else:
        rows = [_ablate_variant(v) for v in variants]

    header = ("representation", "mask", "loss", "val_mean_rho_percent")
    csv_lines = ["schema_version,1", ",".join(header)]
    txt_lines = [f"{'representation':<10s} {'mask':<5s} {'loss':<8s} {'mean rho (%)':>12s}"]
    for row in rows:
        csv_lines.append(",".join(row[h] for h in header))
        txt_lines.append(
            f"{row['representation']:<10s} {row['mask']:<5s} {row['loss']:<8s} "
            f"{row['val_mean_rho_percent']:>12s}"
        )
    (out / "ablation.csv").write_text("\n".join(csv_lines) + "\n")
    (out / "ablation.txt").write_text("\n".join(txt_lines) + "\n")
    print("\n".join(txt_lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="affectseq",
        description="Synthetic-data pipeline for sequence-level emotion intensity "
        "estimation: data generation, staged training, evaluation, gradient "
        "checking, and ablation sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen", "generate a synthetic dataset with its manifest"),
        ("train", "train one stage and write checkpoint + curves"),
        ("eval", "evaluate a checkpoint; prints mean correlation in % last"),
        ("gradcheck", "verify every loss and layer against finite differences"),
        ("ablate", "sweep representation subsets, masking, and loss choices"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        _add_config_flags(cmd)
        if name == "gradcheck":
            cmd.add_argument("--epsilon", type=float, default=1e-6)
            cmd.add_argument("--inject-fault", action="store_true",
                             help="corrupt one backward rule (self-test hook)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "gen":
            return cmd_gen(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            return cmd_eval(config)
        if args.command == "gradcheck":
            return cmd_gradcheck(config, epsilon=args.epsilon, inject_fault=args.inject_fault)
        if args.command == "ablate":
            return cmd_ablate(config)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (data.DatasetError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except GraphError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
