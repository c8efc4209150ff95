"""Command-line pipeline: generate -> train -> analyze (-> report), plus the
penalty-sweep experiment.  All commands take a YAML experiment config; any
config key can be overridden with --set key.path=value."""

from __future__ import annotations

import hashlib
import os
import sys
from pathlib import Path

import click

from .analysis import analyze, write_report
from .config import ConfigError, ExperimentConfig, load_config
from .spin_models import SpinDataset, build_igt_dataset, build_tfim_dataset
from .tetriscnn import (
    build,
    lambda_sweep,
    load_model,
    prediction_r2,
    save_model,
    train,
)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load(config, set_, seed) -> ExperimentConfig:
    try:
        return load_config(config, overrides=set_, seed=seed)
    except (ConfigError, OSError, ValueError) as exc:
        _fail(str(exc))


def _resolve(cfg: ExperimentConfig, key: str, out: str | None, default: str) -> Path:
    base = Path(out) if out else Path(".")
    path = cfg.paths.get(key, default)
    path = Path(path)
    return path if path.is_absolute() else base / path


def _threads(threads: int) -> int:
    if os.environ.get("TETRISPHASE_DETERMINISTIC"):
        return 1
    return max(1, threads)


_shared = [
    click.option("--config", "config", required=True, type=click.Path(exists=True)),
    click.option("--seed", type=int, default=None, help="override the global seed"),
    click.option("--threads", type=int, default=1, help="worker cap for parallel parts"),
    click.option("--out", type=click.Path(), default=None, help="output directory"),
    click.option(
        "--set", "set_", multiple=True, metavar="KEY.PATH=VALUE",
        help="override any config key",
    ),
]


def shared_options(fn):
    for opt in reversed(_shared):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Spin-model phase detection and symbolic distillation pipeline."""


@main.command()
@shared_options
def generate(config, seed, threads, out, set_):
    """Generate a labeled snapshot dataset and write the TPHZ1 file."""
    cfg = _load(config, set_, seed)
    try:
        if cfg.model_kind == "tfim":
            dataset = build_tfim_dataset(cfg.tfim)
        else:
            dataset = build_igt_dataset(cfg.igt)
    except ValueError as exc:
        _fail(str(exc))
    path = _resolve(cfg, "dataset", out, f"{cfg.model_kind}.tphz")
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.save(path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
    click.echo(
        f"wrote {path}: {len(dataset)} samples, grid of {len(dataset.grid)} points, "
        f"seed {dataset.seed}, sha256 {digest}"
    )


@main.command(name="train")
@shared_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), default=None)
def train_cmd(config, seed, threads, out, set_, dataset_path):
    """Train the branch network; writes checkpoint and the trace CSV."""
    cfg = _load(config, set_, seed)
    ds_path = Path(dataset_path) if dataset_path else _resolve(
        cfg, "dataset", out, f"{cfg.model_kind}.tphz"
    )
    try:
        dataset = SpinDataset.load(ds_path)
        model = build(cfg.network, dataset.geometry)
        trace = train(model, dataset, cfg.network)
    except (ValueError, FloatingPointError, OSError) as exc:
        _fail(str(exc))
    ckpt = _resolve(cfg, "checkpoint", out, "model.tpck")
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_model(ckpt, model, cfg.network)
    trace_path = ckpt.with_suffix(".trace.csv")
    trace.to_csv(trace_path)
    final_val = f"{trace.val_loss[-1]:.6g}" if trace.val_loss else "n/a"
    click.echo(
        f"trained {len(trace.train_loss)} epochs, "
        f"final val loss {final_val}, "
        f"R2 {prediction_r2(model, dataset):.4f}; wrote {ckpt} and {trace_path}"
    )


@main.command(name="analyze")
@shared_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), default=None)
def analyze_cmd(config, seed, threads, out, set_, dataset_path, checkpoint_path):
    """Locate the transition, fit branch formulas, write the report."""
    cfg = _load(config, set_, seed)
    ds_path = Path(dataset_path) if dataset_path else _resolve(
        cfg, "dataset", out, f"{cfg.model_kind}.tphz"
    )
    ckpt = Path(checkpoint_path) if checkpoint_path else _resolve(
        cfg, "checkpoint", out, "model.tpck"
    )
    try:
        dataset = SpinDataset.load(ds_path)
        model = load_model(ckpt)
        if tuple(model.geometry) != tuple(dataset.geometry):
            raise ValueError(
                f"checkpoint geometry {model.geometry} does not match "
                f"dataset {dataset.geometry}"
            )
        report = analyze(model, dataset, cfg.sr, cfg.dominance_threshold)
    except (ValueError, FloatingPointError, OSError) as exc:
        _fail(str(exc))
    report_dir = _resolve(cfg, "report_dir", out, "report")
    write_report(report, report_dir)
    if report.warning:
        click.echo(f"warning: {report.warning}")
    click.echo(
        f"transition (output derivative) at {report.output_transition.location:.4f}; "
        f"report in {report_dir}"
    )
    if report.distill:
        for line in report.distill.formulas():
            click.echo(line)


@main.command()
@shared_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), default=None)
@click.option(
    "--lambda-max", "lambda_max_list", multiple=True, type=float, required=True,
    help="repeatable: one value per sweep point",
)
@click.option("--repeats", type=int, default=5, show_default=True)
def sweep(config, seed, threads, out, set_, dataset_path, lambda_max_list, repeats):
    """Train fresh models across lambda_max values; writes the sweep CSV."""
    cfg = _load(config, set_, seed)
    ds_path = Path(dataset_path) if dataset_path else _resolve(
        cfg, "dataset", out, f"{cfg.model_kind}.tphz"
    )
    try:
        dataset = SpinDataset.load(ds_path)
        result = lambda_sweep(
            cfg.network, dataset, lambda_max_list, repeats, threads=_threads(threads)
        )
    except (ValueError, FloatingPointError, OSError) as exc:
        _fail(str(exc))
    path = _resolve(cfg, "sweep_csv", out, "sweep.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    result.to_csv(path)
    for lam in dict.fromkeys(float(v) for v in lambda_max_list):
        click.echo(
            f"lambda_max={lam:g}: dominant {result.dominant_kernel(lam)}, "
            f"mean R2 {result.mean_r2(lam):.4f}"
        )
    click.echo(f"wrote {path}")


@main.command(name="report")
@shared_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), default=None)
@click.pass_context
def report_cmd(ctx, config, seed, threads, out, set_, dataset_path, checkpoint_path):
    """Alias of analyze: regenerate the report directory."""
    ctx.invoke(
        analyze_cmd, config=config, seed=seed, threads=threads, out=out, set_=set_,
        dataset_path=dataset_path, checkpoint_path=checkpoint_path,
    )


if __name__ == "__main__":
    main()
