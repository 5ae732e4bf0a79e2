"""Leave-one-domain-out evaluation harness.

Each domain serves once as the unseen test target: the remaining
domains are partitioned into clients, federated training runs for the
configured number of rounds, and the global model's top-1 accuracy on
the held-out domain is recorded.  Runs repeat over independent seeds
and the report carries every (held_out, seed, accuracy) row plus
per-domain and macro means.  Independent runs can execute in parallel
worker processes; results are deterministic either way because every
run derives its own seed tree.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .augment import AugmentConfig
from .federation import ClientDataset, FedConfig, run_federation
from .losses import LossWeights
from .model import ModelLayout, ModelParams, forward_numpy
from .partition import partition_dirichlet
from .stats import StatKind


def resolve_workers(n_jobs: int | None = None) -> int:
    """Worker-process cap: explicit argument, else FEDSTAIN_THREADS, else 1."""
    if n_jobs is not None and n_jobs >= 1:
        return n_jobs
    env = os.environ.get("FEDSTAIN_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


@dataclass(frozen=True)
class LodoRow:
    held_out: str
    seed: int
    accuracy: float


@dataclass(frozen=True)
class MetricsReport:
    mode: str
    rows: tuple

    def per_domain_mean(self) -> dict:
        domains = sorted({r.held_out for r in self.rows})
        return {
            d: float(np.mean([r.accuracy for r in self.rows if r.held_out == d]))
            for d in domains
        }

    def macro_average(self) -> float:
        means = self.per_domain_mean()
        return float(np.mean(list(means.values())))

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "rows": [
                {"held_out_domain": r.held_out, "seed": r.seed, "accuracy": r.accuracy}
                for r in self.rows
            ],
            "per_domain_mean": self.per_domain_mean(),
            "macro_average": self.macro_average(),
        }


def write_report_csv(path, report: MetricsReport):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["held_out_domain", "seed", "accuracy"])
        for row in report.rows:
            writer.writerow([row.held_out, row.seed, repr(row.accuracy)])


def write_report_json(path, report: MetricsReport):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def evaluate_accuracy(params: ModelParams, images, labels, batch: int = 256) -> float:
    """Top-1 accuracy of the global model on one domain."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    hits = 0
    for start in range(0, images.shape[0], batch):
        _, probs = forward_numpy(params, images[start : start + batch])
        hits += int((probs.argmax(axis=1) == labels[start : start + batch]).sum())
    return hits / images.shape[0]


def build_clients(train_domains: dict, cfg: FedConfig, seed: int) -> list:
    """Partition every source domain into clients via the Dirichlet draw."""
    clients = []
    for name in sorted(train_domains):
        images, labels = train_domains[name]
        stream = rngmod.stream(seed, "partition", name)
        parts = partition_dirichlet(labels, cfg.clients_per_domain, cfg.dirichlet_alpha, stream)
        for k, idx in enumerate(parts):
            clients.append(
                ClientDataset(
                    client_id=f"{name}/{k}",
                    images=np.asarray(images)[idx],
                    labels=np.asarray(labels)[idx],
                )
            )
    return clients


def train_and_evaluate(
    domains: dict,
    held_out: str,
    cfg: FedConfig,
    aug_cfg: AugmentConfig,
    weights: LossWeights,
    layout: ModelLayout,
    seed: int,
    transport=None,
    log_rows=None,
):
    """One LODO cell: train on all domains but ``held_out``, test on it."""
    train_domains = {k: v for k, v in domains.items() if k != held_out}
    if not train_domains:
        raise ValueError("need at least 2 domains for leave-one-domain-out")
    run_cfg = replace(cfg, master_seed=seed)
    clients = build_clients(train_domains, run_cfg, seed)
    params = run_federation(
        clients, run_cfg, aug_cfg, weights, layout, transport=transport, log_rows=log_rows
    )
    images, labels = domains[held_out]
    return params, evaluate_accuracy(params, np.asarray(images), labels)


def write_train_log(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client", "epoch", "step", "cls", "ra", "js", "total", "lr"])
        for r in rows:
            writer.writerow(
                [r.round, r.client, r.epoch, r.step,
                 repr(r.cls), repr(r.ra), repr(r.js), repr(r.total), repr(r.lr)]
            )


def _lodo_job(args):
    import torch

    from .model import save_checkpoint

    domains, held_out, cfg, aug_cfg, weights, layout, seed, out_dir, workers = args
    if workers > 1:
        torch.set_num_threads(1)
    log_rows = [] if out_dir is not None else None
    params, acc = train_and_evaluate(
        domains, held_out, cfg, aug_cfg, weights, layout, seed, log_rows=log_rows
    )
    if out_dir is not None:
        tag = f"{held_out}_seed{seed}"
        save_checkpoint(os.path.join(out_dir, f"checkpoint_{tag}.ckpt"), params)
        write_train_log(os.path.join(out_dir, f"train_log_{tag}.csv"), log_rows)
    return LodoRow(held_out=held_out, seed=seed, accuracy=acc)


def run_lodo(
    domains: dict,
    cfg: FedConfig,
    aug_cfg: AugmentConfig,
    weights: LossWeights,
    layout: ModelLayout,
    seeds,
    n_jobs: int | None = None,
    out_dir=None,
) -> MetricsReport:
    """Full LODO sweep: every domain held out once, repeated per seed.

    With ``out_dir`` set, each cell also writes its final checkpoint and
    per-step loss log there.
    """
    if len(domains) < 2:
        raise ValueError("need at least 2 domains")
    workers = resolve_workers(n_jobs)
    jobs = [
        (domains, held_out, cfg, aug_cfg, weights, layout, int(seed), out_dir, workers)
        for held_out in sorted(domains)
        for seed in seeds
    ]
    workers = min(workers, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_lodo_job, jobs))
    else:
        rows = [_lodo_job(job) for job in jobs]
    return MetricsReport(mode=cfg.mode, rows=tuple(rows))


ABLATION_KINDS = (
    StatKind.MEAN_STD,
    StatKind.QUANTILE90_CV,
    StatKind.LOCAL_MEAN_MAD,
    StatKind.MEAN_IQR,
    StatKind.SKEWNESS_KURTOSIS,
)


def run_ablation(
    domains: dict,
    cfg: FedConfig,
    aug_cfg: AugmentConfig,
    weights: LossWeights,
    layout: ModelLayout,
    seeds,
    kinds=ABLATION_KINDS,
    n_jobs: int | None = None,
) -> dict:
    """LODO sweep per exchanged-statistic kind; returns kind -> report."""
    reports = {}
    for kind in kinds:
        kind_cfg = replace(cfg, stat_kind=kind)
        reports[kind] = run_lodo(domains, kind_cfg, aug_cfg, weights, layout, seeds, n_jobs=n_jobs)
    return reports


def write_ablation_csv(path, reports: dict):
    """Table rows = statistic kinds, columns = per-domain means, 'avg',
    and per-domain std over seeds."""
    kinds = list(reports)
    domains = sorted({r.held_out for r in reports[kinds[0]].rows})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["stat_kind", *domains, "avg", *[f"{d}_std" for d in domains]]
        )
        for kind in kinds:
            report = reports[kind]
            means = report.per_domain_mean()
            stds = []
            for d in domains:
                accs = [r.accuracy for r in report.rows if r.held_out == d]
                stds.append(float(np.std(accs)))
            writer.writerow(
                [kind.value]
                + [repr(means[d]) for d in domains]
                + [repr(report.macro_average())]
                + [repr(s) for s in stds]
            )
