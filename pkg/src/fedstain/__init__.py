"""Federated domain-generalization simulator with higher-order stain statistics.

The package simulates a stain-aware federated protocol end to end:
clients exchange compact per-channel statistic records (never pixels),
augment locally with cross-site stain reconstruction, morphological
chains, and higher-order style mixing, train a small encoder+classifier
under a combined classification/alignment objective, and aggregate by
sample-weighted parameter averaging.  A synthetic multi-domain dataset
builder, stain-distribution diagnostics, a leave-one-domain-out harness
with a plain-FedAvg control arm, and a CLI complete the toolkit.
"""

from .augment import AugmentConfig, AugmentedViews, augmix, make_views, mixstyle, randstain
from .diagnostics import DistributionDiagnostics, analyze_distribution
from .estimator import (
    AugMixAugmenter,
    FedStainClassifier,
    MixStyleAugmenter,
    RandStainAugmenter,
    StainStatsExtractor,
)
from .federation import ClientDataset, FedConfig, FederatedClient, FederatedServer, run_federation
from .lodo import MetricsReport, run_ablation, run_lodo
from .losses import LossBreakdown, LossWeights, cross_entropy, js_alignment, supcon
from .model import ModelLayout, ModelParams, init_params, load_checkpoint, save_checkpoint
from .optim import OptimizerState, ScheduleSpec, adam_step, lr_at
from .partition import partition_dirichlet
from .pool import PoolView, StatPool, StatRecord, build_pool, pool_view, sample_statistics
from .stats import ChannelStats, StatKind, StatsPair, compute_channel_stats, compute_stats_pair
from .synthetic import DomainSpec, default_domain_specs, generate_domain

__version__ = "0.1.0"

__all__ = [
    "AugMixAugmenter",
    "AugmentConfig",
    "AugmentedViews",
    "ChannelStats",
    "ClientDataset",
    "DistributionDiagnostics",
    "DomainSpec",
    "FedConfig",
    "FedStainClassifier",
    "FederatedClient",
    "FederatedServer",
    "LossBreakdown",
    "LossWeights",
    "MetricsReport",
    "MixStyleAugmenter",
    "ModelLayout",
    "ModelParams",
    "OptimizerState",
    "PoolView",
    "RandStainAugmenter",
    "ScheduleSpec",
    "StainStatsExtractor",
    "StatKind",
    "StatPool",
    "StatRecord",
    "StatsPair",
    "adam_step",
    "analyze_distribution",
    "augmix",
    "build_pool",
    "compute_channel_stats",
    "compute_stats_pair",
    "cross_entropy",
    "default_domain_specs",
    "generate_domain",
    "init_params",
    "js_alignment",
    "load_checkpoint",
    "lr_at",
    "make_views",
    "mixstyle",
    "partition_dirichlet",
    "pool_view",
    "randstain",
    "run_ablation",
    "run_federation",
    "run_lodo",
    "sample_statistics",
    "save_checkpoint",
    "supcon",
]
