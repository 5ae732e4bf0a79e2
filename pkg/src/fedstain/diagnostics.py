"""Non-Gaussianity diagnostics for channel-value distributions.

Produces, for a sample of channel values: a density-normalized
histogram, the best Gaussian fit (sample mean/std), Q-Q points against
the standard normal at the (k - 0.5)/n plotting positions, and the
shape summary (skewness, excess kurtosis).  Everything exports as plain
CSV so any external tool can render the figures.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DegenerateInputError
from .stats import compute_channel_stats


@dataclass(frozen=True)
class DistributionDiagnostics:
    bin_edges: np.ndarray
    densities: np.ndarray
    gaussian_fit: tuple  # (mean, std)
    qq_theoretical: np.ndarray
    qq_empirical: np.ndarray
    skewness: float
    excess_kurtosis: float


def analyze_distribution(values, bins: int = 50) -> DistributionDiagnostics:
    """Shape diagnostics of a 1-D sample (>= 32 finite values)."""
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size < 32:
        raise ValueError(f"need at least 32 values, got {vals.size}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("values contain non-finite entries")
    if bins < 1:
        raise ValueError("bins must be positive")

    if np.ptp(vals) == 0.0:
        raise DegenerateInputError("sample has zero spread")
    stats = compute_channel_stats(vals.reshape(1, 1, -1), on_constant="raise")
    mean, std = float(stats.mean[0]), float(stats.std[0])

    densities, edges = np.histogram(vals, bins=bins, density=True)
    n = vals.size
    positions = (np.arange(1, n + 1) - 0.5) / n
    return DistributionDiagnostics(
        bin_edges=edges,
        densities=densities,
        gaussian_fit=(mean, std),
        qq_theoretical=ndtri(positions),
        qq_empirical=np.sort(vals),
        skewness=float(stats.skewness[0]),
        excess_kurtosis=float(stats.kurtosis[0]) - 3.0,
    )


def write_histogram_csv(path, diag: DistributionDiagnostics):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "density"])
        for left, right, dens in zip(diag.bin_edges[:-1], diag.bin_edges[1:], diag.densities):
            writer.writerow([repr(float(left)), repr(float(right)), repr(float(dens))])


def write_qq_csv(path, diag: DistributionDiagnostics, max_points: int = 2000):
    """Q-Q pairs, thinned to at most ``max_points`` evenly spaced ranks."""
    n = diag.qq_theoretical.size
    idx = np.unique(np.linspace(0, n - 1, min(n, max_points)).astype(int))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theoretical_q", "empirical_q"])
        for i in idx:
            writer.writerow([repr(float(diag.qq_theoretical[i])), repr(float(diag.qq_empirical[i]))])


def write_summary_csv(path, rows):
    """Shape summary table: one row per (domain, channel)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "channel", "mean", "std", "skewness", "excess_kurtosis"])
        for row in rows:
            writer.writerow(
                [row[0], row[1]] + [repr(float(v)) for v in row[2:]]
            )
