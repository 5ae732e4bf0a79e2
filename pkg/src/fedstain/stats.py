"""Per-channel distribution statistics of images.

The descriptors computed here are the currency of the whole federation:
clients summarize local images as compact per-channel records (mean,
std, skewness, kurtosis — population moments, divide-by-n) and exchange
only those.  Kurtosis is stored raw (Gaussian -> 3); excess kurtosis is
derived only in diagnostics.

A pluggable family of alternative (shift, scale) descriptor pairs backs
the statistic-pair ablation harness.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConstantChannelError, ConstantChannelWarning, InvalidWindowError

#: Spread substituted for a constant channel under the "substitute" policy,
#: in channel-value units.
CONSTANT_CHANNEL_EPSILON = 1e-6


class ConstantChannelCounter:
    """Counts degenerate-channel substitutions (e.g. white-background patches)."""

    def __init__(self):
        self.count = 0

    def bump(self, n=1):
        self.count += n

    def reset(self):
        self.count = 0


#: Process-wide substitution counter; tests may reset it.
constant_channel_counter = ConstantChannelCounter()


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel (mean, std, skewness, kurtosis) record.

    ``kurtosis`` is the raw standardized fourth moment, so a Gaussian
    channel sits at 3 and the moment inequality kurtosis >= skewness^2 + 1
    holds for every computed record.
    """

    mean: np.ndarray
    std: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray

    def __post_init__(self):
        for name in ("mean", "std", "skewness", "kurtosis"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.mean.shape[0]
        if not (self.std.shape[0] == self.skewness.shape[0] == self.kurtosis.shape[0] == n):
            raise ValueError("channel stat vectors must share length")

    @property
    def channel_count(self) -> int:
        return int(self.mean.shape[0])

    def as_matrix(self) -> np.ndarray:
        """Stack into a 4×C matrix (rows: mean, std, skew, kurt)."""
        return np.stack([self.mean, self.std, self.skewness, self.kurtosis])


class StatKind(enum.Enum):
    """Descriptor pairs usable as the (shift, scale) roles in style mixing."""

    MEAN_STD = "mean_std"
    QUANTILE90_CV = "quantile90_cv"
    LOCAL_MEAN_MAD = "local_mean_mad"
    MEAN_IQR = "mean_iqr"
    SKEWNESS_KURTOSIS = "skewness_kurtosis"


@dataclass(frozen=True)
class StatsPair:
    """A named per-channel (shift, scale) descriptor pair."""

    kind: StatKind
    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))


def _central_moments(flat: np.ndarray):
    mean = flat.mean(axis=1)
    centered = flat - mean[:, None]
    c2 = centered * centered
    m2 = c2.mean(axis=1)
    m3 = (c2 * centered).mean(axis=1)
    m4 = (c2 * c2).mean(axis=1)
    return mean, m2, m3, m4


def compute_channel_stats(image, *, on_constant: str = "raise") -> ChannelStats:
    """Population moments per channel of a C×H×W image.

    mean = E[x], std = sqrt(E[(x-mean)^2]), skewness = E[(x-mean)^3]/std^3,
    kurtosis = E[(x-mean)^4]/std^4 (raw; Gaussian -> 3).

    ``on_constant`` decides what happens when a channel has zero spread:
    "raise" raises :class:`ConstantChannelError`; "substitute" patches the
    record with std = 1e-6, skewness = 0, kurtosis = 3, warns, and counts
    the event so degenerate patches cannot abort a federated round.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected C*H*W image, got shape {arr.shape}")
    if arr.shape[1] * arr.shape[2] < 2:
        raise ValueError("need at least 2 pixels per channel")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")

    flat = arr.reshape(arr.shape[0], -1)
    mean, m2, m3, m4 = _central_moments(flat)
    constant = m2 == 0.0
    if np.any(constant):
        if on_constant == "raise":
            raise ConstantChannelError(np.flatnonzero(constant))
        if on_constant != "substitute":
            raise ValueError(f"unknown on_constant policy {on_constant!r}")
        warnings.warn(
            f"substituting fallback stats for {int(constant.sum())} constant channel(s)",
            ConstantChannelWarning,
            stacklevel=2,
        )
        constant_channel_counter.bump(int(constant.sum()))

    std = np.sqrt(m2)
    safe = np.where(constant, 1.0, std)
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(constant, 0.0, m3 / safe**3)
        kurt = np.where(constant, 3.0, m4 / safe**4)
    std = np.where(constant, CONSTANT_CHANNEL_EPSILON, std)
    return ChannelStats(mean=mean, std=std, skewness=skew, kurtosis=kurt)


def quantile(values: np.ndarray, p, axis=None):
    """Quantile under the (k - 0.5)/n plotting-position convention.

    Linear interpolation between the closest order statistics; fixed
    package-wide so the ablation descriptors are deterministic.
    """
    return np.quantile(values, p, axis=axis, method="hazen")


def _local_mean_mad(flat: np.ndarray, shape, window: int):
    c, h, w = shape
    if window < 1 or window > h or window > w:
        raise InvalidWindowError(f"window {window} does not fit in {h}x{w} image")
    th, tw = h // window, w // window
    tiles = (
        flat.reshape(c, h, w)[:, : th * window, : tw * window]
        .reshape(c, th, window, tw, window)
        .mean(axis=(2, 4))
        .reshape(c, -1)
    )
    center = np.median(tiles, axis=1)
    mad = np.median(np.abs(tiles - center[:, None]), axis=1)
    return center, mad


def compute_stats_pair(
    image,
    kind: StatKind,
    *,
    window: int = 8,
    on_constant: str = "raise",
) -> StatsPair:
    """Per-channel (shift, scale) descriptor pair of the requested kind.

    For ``SKEWNESS_KURTOSIS`` this equals the (skewness, kurtosis) fields
    of :func:`compute_channel_stats`, which is the pair the protocol
    exchanges by default; the remaining kinds exist for the ablation
    harness.
    """
    stats = compute_channel_stats(image, on_constant=on_constant)
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    flat = arr.reshape(arr.shape[0], -1)

    if kind is StatKind.MEAN_STD:
        return StatsPair(kind, stats.mean, stats.std)
    if kind is StatKind.SKEWNESS_KURTOSIS:
        return StatsPair(kind, stats.skewness, stats.kurtosis)
    if kind is StatKind.MEAN_IQR:
        iqr = quantile(flat, 0.75, axis=1) - quantile(flat, 0.25, axis=1)
        return StatsPair(kind, stats.mean, iqr)
    if kind is StatKind.QUANTILE90_CV:
        q90 = quantile(flat, 0.9, axis=1)
        denom = np.maximum(np.abs(stats.mean), CONSTANT_CHANNEL_EPSILON)
        return StatsPair(kind, q90, stats.std / denom)
    if kind is StatKind.LOCAL_MEAN_MAD:
        center, mad = _local_mean_mad(flat, arr.shape, window)
        return StatsPair(kind, center, mad)
    raise ValueError(f"unknown stat kind {kind!r}")
