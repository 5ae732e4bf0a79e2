"""Patch extraction with boundary handling, plus the quality filter.

Positive patches are cropped around coordinate annotations with a random
offset so the annotated structure does not always sit dead-center; when
a near-border annotation defeats the random placement, the crop anchors
at the nearest image corner instead.  Negatives come from regions
containing no annotation.  Low-quality patches are dropped by three
cheap criteria: white-area fraction, edge complexity, and color spread.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ImageTooSmallError


@dataclass(frozen=True)
class PatchSpec:
    patch_size: int = 128
    max_center_attempts: int = 3
    max_white_fraction: float = 0.85
    min_edge_complexity: float = 0.002
    min_color_spread: float = 0.01
    #: fraction of the patch half-width the annotation may drift from center
    max_offset_frac: float = 0.35
    white_luminance: float = 0.9

    def __post_init__(self):
        if self.patch_size < 32:
            raise ValueError("patch_size must be at least 32")
        if self.max_center_attempts < 1:
            raise ValueError("need at least one placement attempt")


def read_annotations_csv(path) -> list:
    """Load (x, y) coordinate annotations from a CSV file.

    Accepts an optional ``x,y`` header; any extra columns are ignored.
    """
    out = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                out.append((float(row[0]), float(row[1])))
            except ValueError:
                if not out:  # header line
                    continue
                raise
    return out


def _luminance(patch: np.ndarray) -> np.ndarray:
    if patch.shape[0] == 1:
        return patch[0]
    return 0.2126 * patch[0] + 0.7152 * patch[1] + 0.0722 * patch[2]


def quality_check(patch: np.ndarray, spec: PatchSpec):
    """Return None when the patch passes, else the name of the failed rule.

    A ``max_white_fraction`` of 0 disables the white cap (thresholds of
    0/0/0 accept everything).
    """
    lum = _luminance(np.asarray(patch, dtype=np.float64))
    if spec.max_white_fraction > 0:
        white = float((lum > spec.white_luminance).mean())
        if white > spec.max_white_fraction:
            return "white_fraction"
    gy, gx = np.gradient(lum)
    if float(np.hypot(gy, gx).mean()) < spec.min_edge_complexity:
        return "edge_complexity"
    spread = np.asarray(patch, dtype=np.float64).reshape(patch.shape[0], -1).std(axis=1)
    if float(spread.min()) < spec.min_color_spread:
        return "color_spread"
    return None


def passes_quality(patch: np.ndarray, spec: PatchSpec) -> bool:
    return quality_check(patch, spec) is None


def _crop(image: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    return image[:, top : top + size, left : left + size]


def _random_offset_crop(image, x, y, spec, rng):
    """One placement attempt; None when the patch would leave the image."""
    _, h, w = image.shape
    size = spec.patch_size
    max_off = spec.max_offset_frac * size / 2.0
    oy = float(rng.uniform(-max_off, max_off))
    ox = float(rng.uniform(-max_off, max_off))
    top = int(round(y + oy - size / 2.0))
    left = int(round(x + ox - size / 2.0))
    if top < 0 or left < 0 or top + size > h or left + size > w:
        return None
    return _crop(image, top, left, size)


def _corner_crop(image, x, y, spec):
    """Fallback: anchor the patch at the image corner nearest the annotation."""
    _, h, w = image.shape
    size = spec.patch_size
    top = 0 if y < h / 2 else h - size
    left = 0 if x < w / 2 else w - size
    return _crop(image, top, left, size)


def extract_patches(image: np.ndarray, annotations, spec: PatchSpec, rng: np.random.Generator):
    """Positive patches (label 1), one per annotation.

    Each annotation gets up to ``max_center_attempts`` random placements
    that keep the annotated point inside the patch; when all fail near a
    border the crop re-anchors at the nearest corner.
    """
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    if h < spec.patch_size or w < spec.patch_size:
        raise ImageTooSmallError(f"{h}x{w} image cannot yield {spec.patch_size} patches")
    out = []
    for x, y in annotations:
        patch = None
        for _ in range(spec.max_center_attempts):
            patch = _random_offset_crop(image, x, y, spec, rng)
            if patch is not None:
                break
        if patch is None:
            patch = _corner_crop(image, x, y, spec)
        out.append((patch, 1))
    return out


def sample_negatives(
    image: np.ndarray,
    annotations,
    spec: PatchSpec,
    rng: np.random.Generator,
    count: int,
    max_attempts_per_patch: int = 20,
):
    """Patches (label 0) from regions containing no annotated point."""
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    if h < spec.patch_size or w < spec.patch_size:
        raise ImageTooSmallError(f"{h}x{w} image cannot yield {spec.patch_size} patches")
    size = spec.patch_size
    points = np.asarray(annotations, dtype=np.float64).reshape(-1, 2)
    out = []
    for _ in range(count):
        found = None
        for _ in range(max_attempts_per_patch):
            top = int(rng.integers(0, h - size + 1))
            left = int(rng.integers(0, w - size + 1))
            inside = (
                (points[:, 0] >= left)
                & (points[:, 0] < left + size)
                & (points[:, 1] >= top)
                & (points[:, 1] < top + size)
            )
            if not inside.any():
                found = _crop(image, top, left, size)
                break
        if found is None:
            warnings.warn("no annotation-free region found for negative sampling")
            break
        out.append((found, 0))
    return out
