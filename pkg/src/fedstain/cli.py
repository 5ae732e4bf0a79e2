"""Operator CLI: dataset building, stain analysis, training, ablations,
and embedding export.

Every command is deterministic under a fixed master seed and writes
plain CSV/JSON artifacts (plot rendering is left to external tools).
Exit codes: 0 success, 1 runtime failure, 2 invalid input or config.
"""

from __future__ import annotations

import functools
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .config import RunConfig, load_config, save_config
from .diagnostics import analyze_distribution, write_histogram_csv, write_qq_csv, write_summary_csv
from .errors import CheckpointError, ConfigError, FedStainError, InfeasibleShapeError
from .lodo import (
    run_ablation,
    run_lodo,
    write_ablation_csv,
    write_report_csv,
    write_report_json,
)
from .manifest import load_all_domains, read_manifest, write_manifest
from .model import load_checkpoint
from .patches import PatchSpec, quality_check
from .stats import compute_channel_stats
from .synthetic import generate_domain

INVALID_INPUT_ERRORS = (ConfigError, InfeasibleShapeError, CheckpointError, FileNotFoundError, KeyError)


def _command_guard(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except INVALID_INPUT_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except (FedStainError, OSError, ValueError) as exc:
            click.echo(f"runtime failure: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Run config YAML.")
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.option("--out", "out_dir", type=click.Path(), default="fedstain_out", help="Output directory.")
@click.option(
    "--mode",
    type=click.Choice(["fedstain", "fedavg_baseline"]),
    default=None,
    help="Override the training mode.",
)
@click.pass_context
def main(ctx, config_path, seed, out_dir, mode):
    """Federated stain-aware domain-generalization toolkit."""
    try:
        config = load_config(config_path) if config_path else RunConfig()
    except INVALID_INPUT_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    fed = config.fed
    if seed is not None:
        fed = replace(fed, master_seed=seed)
    if mode is not None:
        fed = replace(fed, mode=mode)
    config = replace(config, fed=fed)
    ctx.obj = {"config": config, "out": Path(out_dir)}


def _load_domains(config: RunConfig):
    """Domain name -> (images, labels), from the manifest when configured,
    else from the synthetic generator specs."""
    if config.manifest_path:
        return load_all_domains(read_manifest(config.manifest_path))
    return {spec.name: generate_domain(spec) for spec in config.generator_specs}


@main.command("build-dataset")
@click.pass_context
@_command_guard
def cmd_build_dataset(ctx):
    """Generate the synthetic domains, quality-filter, and write a manifest."""
    config: RunConfig = ctx.obj["config"]
    out: Path = ctx.obj["out"]
    out.mkdir(parents=True, exist_ok=True)
    patch_spec = PatchSpec(patch_size=max(32, config.generator_specs[0].image_hw))
    domains = {}
    for spec in config.generator_specs:
        images, labels = generate_domain(spec)
        keep = np.array([quality_check(img, patch_spec) is None for img in images])
        images, labels = images[keep], labels[keep]
        domains[spec.name] = (images, labels)
        pooled = images.transpose(1, 0, 2, 3).reshape(3, -1)
        cs = compute_channel_stats(pooled[:, None, :])
        click.echo(
            f"{spec.name}: {images.shape[0]} patches kept "
            f"({int((~keep).sum())} filtered), "
            f"skew={np.round(cs.skewness, 3).tolist()} kurt={np.round(cs.kurtosis, 3).tolist()}"
        )
    index = write_manifest(out / "dataset", domains)
    save_config(out / "config.yaml", config)
    click.echo(f"manifest: {index}")


@main.command("analyze-stains")
@click.argument("manifest_path", type=click.Path(exists=True), required=False)
@click.option("--bins", type=int, default=50)
@click.pass_context
@_command_guard
def cmd_analyze_stains(ctx, manifest_path, bins):
    """Per-domain distribution diagnostics (histogram, Q-Q, shape table)."""
    config: RunConfig = ctx.obj["config"]
    out: Path = ctx.obj["out"]
    out.mkdir(parents=True, exist_ok=True)
    path = manifest_path or config.manifest_path
    if not path:
        raise ConfigError("analyze-stains needs a manifest (argument or data.manifest)")
    domains = load_all_domains(read_manifest(path))
    summary_rows = []
    for name, (images, _) in sorted(domains.items()):
        for c in range(images.shape[1]):
            values = images[:, c].ravel()
            diag = analyze_distribution(values, bins=bins)
            write_histogram_csv(out / f"hist_{name}_ch{c}.csv", diag)
            write_qq_csv(out / f"qq_{name}_ch{c}.csv", diag)
            summary_rows.append(
                (name, c, diag.gaussian_fit[0], diag.gaussian_fit[1], diag.skewness, diag.excess_kurtosis)
            )
            click.echo(
                f"{name} ch{c}: skew={diag.skewness:+.3f} excess_kurt={diag.excess_kurtosis:+.3f}"
            )
    write_summary_csv(out / "stain_summary.csv", summary_rows)


@main.command("train")
@click.option("--jobs", type=int, default=None, help="Worker processes (default FEDSTAIN_THREADS).")
@click.pass_context
@_command_guard
def cmd_train(ctx, jobs):
    """Leave-one-domain-out training; writes metrics, checkpoints, loss logs."""
    _run_train(ctx, jobs=jobs)


def _run_train(ctx, jobs=None):
    config: RunConfig = ctx.obj["config"]
    out: Path = ctx.obj["out"]
    out.mkdir(parents=True, exist_ok=True)
    domains = _load_domains(config)
    report = run_lodo(
        domains,
        config.fed,
        config.augment,
        config.loss,
        config.model,
        config.seeds,
        n_jobs=jobs,
        out_dir=str(out),
    )
    write_report_csv(out / "metrics.csv", report)
    write_report_json(out / "metrics.json", report)
    for domain, mean in sorted(report.per_domain_mean().items()):
        click.echo(f"held-out {domain}: {mean:.4f}")
    click.echo(f"macro average ({report.mode}): {report.macro_average():.4f}")
    return report


@main.command("ablate-stats")
@click.option("--jobs", type=int, default=None, help="Worker processes (default FEDSTAIN_THREADS).")
@click.pass_context
@_command_guard
def cmd_ablate_stats(ctx, jobs):
    """Run the LODO sweep once per exchanged-statistic kind."""
    config: RunConfig = ctx.obj["config"]
    out: Path = ctx.obj["out"]
    out.mkdir(parents=True, exist_ok=True)
    domains = _load_domains(config)
    reports = run_ablation(
        domains,
        config.fed,
        config.augment,
        config.loss,
        config.model,
        config.seeds,
        kinds=config.ablation_kinds,
        n_jobs=jobs,
    )
    write_ablation_csv(out / "ablation.csv", reports)
    for kind, report in reports.items():
        click.echo(f"{kind.value}: macro avg {report.macro_average():.4f}")


@main.command("export-embeddings")
@click.argument("checkpoint_path", type=click.Path(exists=True))
@click.argument("manifest_path", type=click.Path(exists=True))
@click.pass_context
@_command_guard
def cmd_export_embeddings(ctx, checkpoint_path, manifest_path):
    """Forward every sample through a checkpoint; one CSV row per sample."""
    config: RunConfig = ctx.obj["config"]
    out: Path = ctx.obj["out"]
    out.mkdir(parents=True, exist_ok=True)
    params = load_checkpoint(checkpoint_path, config.model)
    domains = load_all_domains(read_manifest(manifest_path))
    from .model import forward_numpy

    path = out / "embeddings.csv"
    with open(path, "w", encoding="utf-8") as fh:
        dim = params.layout.embed_dim
        fh.write("domain,label," + ",".join(f"e{i}" for i in range(dim)) + "\n")
        for name, (images, labels) in sorted(domains.items()):
            for start in range(0, images.shape[0], 256):
                emb, _ = forward_numpy(params, images[start : start + 256])
                for row, label in zip(emb, labels[start : start + 256]):
                    fh.write(f"{name},{int(label)}," + ",".join(repr(float(v)) for v in row) + "\n")
    click.echo(f"embeddings: {path}")


if __name__ == "__main__":
    main()
